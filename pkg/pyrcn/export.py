import csv
import json
from dataclasses import dataclass
from locale import getdefaultlocale
from pathlib import Path
from typing import Any, Iterable, Literal, Optional, TextIO

from pathvalidate import sanitize_filename

from .utils import format_float, get_logger

SUPPORTED_LANGUAGES = {
    "cs",
    "da",
    "de",
    "en",
    "es",
    "fr",
    "it",
    "nl",
    "pl",
    "pt",
    "ru",
    "zh",
}


@dataclass
class TableExporter:
    """
    Writes result rows (dicts sharing the same keys) as CSV or JSON lines. Numbers are printed with 12
    significant digits, so identical results give identical bytes.
    """

    lang: str = "en"
    """ Locale used when decimal_localization is enabled. """

    decimal_localization: bool = False
    """ Localize numbers with babel. Only meant for the console, files stay plain. """

    csv_delimiter: str = ","

    format: Literal["json", "csv"] = "csv"
    """ CSV with a header row, or one JSON object per line. """

    def __post_init__(self):
        self._log = get_logger(__name__)

        if self.lang == "auto":
            locale = getdefaultlocale()[0]
            if locale is None:
                self.lang = "en"
            else:
                self.lang = locale.split("_")[0]

        if self.lang not in SUPPORTED_LANGUAGES:
            self._log.info(f'Language not yet supported "{self.lang}", defaulting to "en"')
            self.lang = "en"

        # localized decimals may contain commas
        if self.decimal_localization and self.csv_delimiter == ",":
            self.csv_delimiter = ";"

    def _cell(self, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return " ".join(str(self._cell(v)) for v in value)
        if isinstance(value, str) or value is None:
            return "" if value is None else value
        try:
            return format_float(value, self.lang if self.decimal_localization else None)
        except (TypeError, ValueError):
            return str(value)

    def fields(self, rows: list[dict[str, Any]]) -> list[str]:
        names: list[str] = []
        for row in rows:
            names.extend(key for key in row if key not in names)
        return names

    def export(
        self, fp: TextIO, rows: Iterable[dict[str, Any]], format: Optional[Literal["json", "csv"]] = None
    ) -> None:
        format = format or self.format
        rows = list(rows)
        self._log.debug(f"Exporting {len(rows)} rows ...")
        formatted = [{key: self._cell(value) for key, value in row.items()} for row in rows]

        if format == "csv":
            writer = csv.DictWriter(fp, fieldnames=self.fields(rows), delimiter=self.csv_delimiter, lineterminator="\n")
            writer.writeheader()
            writer.writerows(formatted)
        elif format == "json":
            for row in formatted:
                fp.write(json.dumps(row))
                fp.write("\n")

    def export_to(self, path: Optional[Path], rows: Iterable[dict[str, Any]], fp: Optional[TextIO] = None) -> None:
        """Write to a file when a path is given (never localized), otherwise to fp."""
        if path is None:
            self.export(fp, rows)
            return
        plain = TableExporter(lang=self.lang, decimal_localization=False, csv_delimiter=",", format=self.format)
        with open(path, "w", encoding="utf-8", newline="") as f:
            plain.export(f, rows)
        self._log.info(f"Wrote {path}")


def sibling(path: Path, suffix: str) -> Path:
    """A file next to path whose name extends path's stem, sanitized for every platform."""
    return path.with_name(sanitize_filename(f"{path.stem}_{suffix}{path.suffix or '.csv'}"))
