#!/usr/bin/env python3
"""Fetch the public benchmark CSVs used by the acceptance suite.

Downloads (network required):
  data/diabetes.csv       Pima Indians Diabetes (768 rows, 8 numeric
                          features, binary outcome)
  data/german_credit.csv  Statlog German Credit (1000 rows, mixed
                          numeric/categorical, binary outcome)

The digits 4&9 data ships with scikit-learn and needs no download. The
acceptance tests skip the file-based checks when these CSVs are absent,
so running this script is optional but recommended where network access
exists. Any equivalent file with the same column layout works too; see
the schemas in tests/dataset_files.py.
"""

import csv
import io
import os
import sys
import urllib.request

HERE = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.environ.get(
    "FORESTCASE_DATA_DIR", os.path.join(HERE, "..", "data")
)

PIMA_URLS = [
    # classic mirror of the UCI Pima file (no header)
    "https://raw.githubusercontent.com/jbrownlee/Datasets/master/pima-indians-diabetes.data.csv",
]
PIMA_COLUMNS = [
    "pregnancies", "glucose", "blood_pressure", "skin_thickness",
    "insulin", "bmi", "pedigree", "age", "outcome",
]

GERMAN_URLS = [
    "https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data",
]
GERMAN_COLUMNS = [
    "checking_status", "duration", "credit_history", "purpose",
    "credit_amount", "savings_status", "employment",
    "installment_commitment", "personal_status", "other_parties",
    "residence_since", "property_magnitude", "age", "other_payment_plans",
    "housing", "existing_credits", "job", "num_dependents",
    "own_telephone", "foreign_worker", "class",
]


def _download(urls: list) -> str:
    last = None
    for url in urls:
        try:
            with urllib.request.urlopen(url, timeout=60) as resp:
                return resp.read().decode("utf-8")
        except Exception as exc:  # noqa: BLE001 - report and try the next mirror
            last = exc
            print(f"  failed: {url} ({exc})")
    raise SystemExit(f"could not download from any mirror: {last}")


def fetch_pima(path: str) -> None:
    print("fetching Pima diabetes ...")
    text = _download(PIMA_URLS)
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PIMA_COLUMNS)
        w.writerows(rows)
    print(f"  wrote {path} ({len(rows)} rows)")


def fetch_german(path: str) -> None:
    print("fetching German credit ...")
    text = _download(GERMAN_URLS)
    rows = [line.split() for line in text.splitlines() if line.strip()]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GERMAN_COLUMNS)
        w.writerows(rows)
    print(f"  wrote {path} ({len(rows)} rows)")


def main() -> int:
    os.makedirs(DATA_DIR, exist_ok=True)
    pima = os.path.join(DATA_DIR, "diabetes.csv")
    german = os.path.join(DATA_DIR, "german_credit.csv")
    if os.path.exists(pima):
        print(f"already present: {pima}")
    else:
        fetch_pima(pima)
    if os.path.exists(german):
        print(f"already present: {german}")
    else:
        fetch_german(german)
    return 0


if __name__ == "__main__":
    sys.exit(main())
