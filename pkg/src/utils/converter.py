""" Manifest to PDF Converter

Render a run manifest (and the summary tables it points to) as a PDF
with ReportLab. Used by `oscar report` and, when enabled, by the last
node of the experiment graph.
"""
from utils.logging import get_logger
# Initialize logger
logger = get_logger(__name__)

import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union

from reportlab.lib import colors
from reportlab.lib.colors import HexColor
from reportlab.lib.enums import TA_CENTER, TA_LEFT
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle


################################## Constants ##################################


# Manifest keys rendered as key/value tables, in order
_SECTIONS = [
  ("Run", ("status", "version", "started", "wall_clock", "profile_hash", "error")),
  ("Grid", None),
  ("Constants", None),
]

_MAX_ROWS = 60


################################ Converter class ##############################


class ManifestToPDF:
  """Lay out a manifest as titled key/value tables plus the artifact list."""

  def __init__(self, page_size=A4):
    self.page_size = page_size
    self.styles = self._create_styles()

  def _create_styles(self) -> dict[str, ParagraphStyle]:
    """Create custom paragraph styles."""
    base_styles = getSampleStyleSheet()

    return {
      'title': ParagraphStyle(
        'Title',
        parent=base_styles['Heading1'],
        fontSize=18,
        spaceAfter=16,
        spaceBefore=8,
        alignment=TA_CENTER,
        textColor=HexColor('#2C3E50'),
        fontName='Helvetica-Bold'
      ),
      'section': ParagraphStyle(
        'Section',
        parent=base_styles['Heading2'],
        fontSize=13,
        spaceAfter=8,
        spaceBefore=6,
        alignment=TA_LEFT,
        textColor=HexColor('#2C3E50'),
        fontName='Helvetica-Bold'
      ),
      'cell': ParagraphStyle(
        'Cell',
        parent=base_styles['Normal'],
        fontSize=8,
        leading=10,
        textColor=HexColor('#34495E'),
      ),
    }

  def _escape(self, value: Any) -> str:
    if isinstance(value, float):
      text = f"{value:.6g}"
    elif isinstance(value, (dict, list)):
      text = json.dumps(value)
    else:
      text = "" if value is None else str(value)
    return (text.replace('&', '&amp;')
           .replace('<', '&lt;')
           .replace('>', '&gt;'))

  def _table(self, rows: Sequence[Sequence[Any]], header: Optional[Sequence[str]] = None) -> Table:
    cells = [[Paragraph(self._escape(v), self.styles['cell']) for v in row] for row in rows[:_MAX_ROWS]]
    if len(rows) > _MAX_ROWS:
      cells.append([Paragraph(f"... {len(rows) - _MAX_ROWS} more rows", self.styles['cell'])]
                   + [""] * (len(rows[0]) - 1))
    if header:
      cells.insert(0, [Paragraph(f"<b>{self._escape(h)}</b>", self.styles['cell']) for h in header])
    table = Table(cells, repeatRows=1 if header else 0, hAlign='LEFT')
    style = [
      ('GRID', (0, 0), (-1, -1), 0.25, colors.grey),
      ('VALIGN', (0, 0), (-1, -1), 'TOP'),
    ]
    if header:
      style.append(('BACKGROUND', (0, 0), (-1, 0), HexColor('#ECF0F1')))
    table.setStyle(TableStyle(style))
    return table

  def _key_values(self, mapping: Mapping[str, Any], keys: Optional[Sequence[str]] = None) -> Table:
    keys = list(mapping.keys()) if keys is None else [k for k in keys if k in mapping]
    return self._table([[k, mapping[k]] for k in keys], header=("key", "value"))

  def generate_pdf(self,
           manifest: Mapping[str, Any],
           summary: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
           header: str = "oscar run",
           filename: str = "report.pdf",
           output_dir: str = "") -> str:
    """
    Generate the PDF.

    Args:
      manifest: RunManifest as a dict
      summary: optional named row lists (e.g. LAP rows, rate fits) shown as tables
      filename: Output PDF filename
      output_dir: Directory to save the PDF (optional, defaults to
            current directory)

    Returns:
      Absolute path to created PDF file
    """
    if output_dir:
      os.makedirs(output_dir, exist_ok=True)
      filepath = os.path.join(output_dir, filename)
    else:
      filepath = filename

    doc = SimpleDocTemplate(
      filepath,
      pagesize=self.page_size,
      rightMargin=48,
      leftMargin=48,
      topMargin=56,
      bottomMargin=56
    )

    story = [Paragraph(self._escape(header), self.styles['title']), Spacer(1, 12)]

    for title, keys in _SECTIONS:
      source = manifest if keys else manifest.get(title.lower(), {})
      if not source:
        continue
      story.append(Paragraph(title, self.styles['section']))
      story.append(self._key_values(source, keys))
      story.append(Spacer(1, 12))
      logger.debug(f"Added section: {title}")

    for name, rows in (summary or {}).items():
      if not rows:
        continue
      columns = list(rows[0].keys())
      story.append(Paragraph(self._escape(name), self.styles['section']))
      story.append(self._table([[row.get(c) for c in columns] for row in rows], header=columns))
      story.append(Spacer(1, 12))
      logger.debug(f"Added summary table: {name}")

    artifacts = manifest.get("artifacts") or []
    story.append(Paragraph(f"Artifacts ({len(artifacts)})", self.styles['section']))
    if artifacts:
      story.append(self._table([[a.get("path"), a.get("kind"), str(a.get("sha256", ""))[:16]] for a in artifacts],
                               header=("path", "kind", "sha256")))

    doc.build(story)
    return os.path.abspath(filepath)


############################### Interface method ##############################


def manifest_to_pdf(manifest: Mapping[str, Any],
          output_filename: str = "report.pdf",
          output_dir: Optional[str] = None,
          summary: Optional[Mapping[str, Sequence[Mapping[str, Any]]]] = None,
          header: str = "oscar run") -> str:
  """
  Simple interface function to render a manifest dict to PDF.

  Returns:
    str: Path to the created PDF file
  """
  converter = ManifestToPDF()
  logger.info("Starting the conversion")
  return converter.generate_pdf(manifest=manifest,
                  summary=summary,
                  header=header,
                  filename=output_filename,
                  output_dir=output_dir or "")


def render_report(run_dir: Union[str, Path], output_filename: str = "report.pdf") -> str:
  """Render `<run_dir>/manifest.json` together with the JSON summaries it lists."""
  run_dir = Path(run_dir)
  manifest_path = run_dir / "manifest.json"
  if not manifest_path.is_file():
    raise FileNotFoundError(f"No manifest in {run_dir}")
  with open(manifest_path, encoding="utf-8") as f:
    manifest = json.load(f)

  summary: dict[str, list[dict[str, Any]]] = {}
  for artifact in manifest.get("artifacts") or []:
    if artifact.get("kind") != "json" or not str(artifact.get("path", "")).endswith("summary.json"):
      continue
    with open(run_dir / artifact["path"], encoding="utf-8") as f:
      content = json.load(f)
    for name, rows in content.items():
      if isinstance(rows, list) and rows and isinstance(rows[0], dict):
        summary[f"{Path(artifact['path']).parent.as_posix()}/{name}"] = rows

  header = f"oscar run: {manifest.get('config', {}).get('profile', {}).get('family', 'profile')}"
  return manifest_to_pdf(manifest, output_filename, str(run_dir), summary=summary, header=header)
