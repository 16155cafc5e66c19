"""Plain-text serialization conventions shared by all file outputs.

Every float is written with 17 significant digits so that reading a CSV back
reproduces the in-memory doubles exactly; '.' decimal point, no separators,
LF newlines.
"""


def fmt(x) -> str:
    """Round-trip-faithful float formatting ('' for None)."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    """Rows of already-formatted strings; header is a list of column names."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
