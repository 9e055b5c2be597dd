"""Build the case-study fixture database next to this file."""

from pathlib import Path

from convbi.database import connect

ROWS = [
    ("2023-03-31", "Company A", "east", 100.0, 90.0),
    ("2023-06-30", "Company A", "west", 110.0, 95.0),
    ("2024-03-31", "Company A", "east", 130.0, 120.0),
    ("2024-06-30", "Company A", "west", 140.0, 125.0),
    ("2024-03-31", "Company B", "east", 70.0, 60.0),
]


def build(path: Path | None = None) -> Path:
    path = path or Path(__file__).parent / "dbs" / "main.sqlite"
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.exists():
        path.unlink()
    conn = connect(path)
    conn.execute(
        "CREATE TABLE revenue_by_quarter (ftime TEXT, cname TEXT, region TEXT, "
        "shouldincome REAL, shouldincome_after REAL)"
    )
    conn.executemany("INSERT INTO revenue_by_quarter VALUES (?, ?, ?, ?, ?)", ROWS)
    conn.execute("CREATE TABLE hr_headcount (dept TEXT, year INT, heads INT)")
    conn.execute("INSERT INTO hr_headcount VALUES ('data', 2024, 12)")
    conn.commit()
    conn.close()
    return path


if __name__ == "__main__":
    print(f"built {build()}")
