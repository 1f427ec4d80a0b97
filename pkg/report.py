import openpyxl
import pandas as pd
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side

comparison_columns = ["quantity", "reference", "model", "l1_rel", "linf_rel"]
check_columns = ["name", "kind", "value", "tol", "passed"]

# Custom column widths
col_widths = {
    "quantity": 12,
    "reference": 14,
    "model": 14,
    "l1_rel": 14,
    "linf_rel": 14,
    "name": 34,
    "kind": 20,
    "value": 14,
    "tol": 11.5,
    "passed": 10,
}

thin_border = Border(
    left=Side(style='thin'),
    right=Side(style='thin'),
    top=Side(style='thin'),
    bottom=Side(style='thin')
)

title_fill = PatternFill("solid", fgColor="0000FF")
header_fill = PatternFill("solid", fgColor="ADD8E6")
fail_fill = PatternFill("solid", fgColor="FFFF00")


def _write_sheet(ws, titles, columns, rows, highlight=None):
    for i, text in enumerate(titles, start=1):
        ws.merge_cells(start_row=i, start_column=1, end_row=i, end_column=len(columns))
        cell = ws.cell(i, 1, text)
        cell.alignment = Alignment(horizontal="left", vertical="center")
        if i == 1:
            cell.font = Font(bold=True, size=16, color="FFFFFF")
            cell.fill = title_fill
            ws.row_dimensions[i].height = 25

    # --- Header row ---
    header_row = len(titles) + 1
    for col_num, col_name in enumerate(columns, 1):
        cell = ws.cell(header_row, col_num, col_name)
        cell.font = Font(bold=True)
        cell.fill = header_fill
        cell.alignment = Alignment(horizontal="center", vertical="center", wrap_text=True)
        cell.border = thin_border
        ws.column_dimensions[openpyxl.utils.get_column_letter(col_num)].width = col_widths.get(col_name, 12)

    for r, row in enumerate(rows, start=header_row + 1):
        flagged = highlight is not None and highlight(row)
        for c, col_name in enumerate(columns, 1):
            value = row.get(col_name)
            cell = ws.cell(r, c, value if not isinstance(value, (list, tuple)) else ", ".join(map(str, value)))
            cell.border = thin_border
            if isinstance(value, float):
                cell.number_format = "0.000E+00"
                cell.alignment = Alignment(horizontal="right")
            if flagged:
                cell.fill = fail_fill
    ws.freeze_panes = ws.cell(header_row + 1, 1)


def write_report(manifest: dict, comparisons: pd.DataFrame, path):
    """Formatted workbook with the model comparisons and the check outcomes."""
    wb = openpyxl.Workbook()
    ws = wb.active
    ws.title = "Comparisons"
    status = "PASSED" if manifest["passed"] else "FAILED"
    _write_sheet(
        ws,
        [f"Scenario {manifest['scenario']}", f"Seed :- {manifest['seed']}", f"Checks :- {status}"],
        comparison_columns,
        comparisons.to_dict("records"),
    )

    ws_checks = wb.create_sheet("Checks")
    _write_sheet(
        ws_checks,
        [f"Scenario {manifest['scenario']} checks"],
        check_columns,
        manifest["checks"],
        highlight=lambda row: not row["passed"],
    )
    wb.save(path)
    return path
