"""Locations and schemas of the optional benchmark CSVs.

``scripts/fetch_datasets.py`` downloads these where network access
exists; tests that need them skip with a pointer to that script when the
files are absent. Override the directory with ``FORESTCASE_DATA_DIR``.
"""

import os

HERE = os.path.dirname(os.path.abspath(__file__))
DATA_DIR = os.environ.get(
    "FORESTCASE_DATA_DIR", os.path.join(HERE, "..", "data")
)

DIABETES_PATH = os.path.join(DATA_DIR, "diabetes.csv")
DIABETES_SCHEMA = {
    "pregnancies": "numeric",
    "glucose": "numeric",
    "blood_pressure": "numeric",
    "skin_thickness": "numeric",
    "insulin": "numeric",
    "bmi": "numeric",
    "pedigree": "numeric",
    "age": "numeric",
}
DIABETES_LABEL = "outcome"

GERMAN_PATH = os.path.join(DATA_DIR, "german_credit.csv")
GERMAN_SCHEMA = {
    "checking_status": "categorical",
    "duration": "numeric",
    "credit_history": "categorical",
    "purpose": "categorical",
    "credit_amount": "numeric",
    "savings_status": "categorical",
    "employment": "categorical",
    "installment_commitment": "numeric",
    "personal_status": "categorical",
    "other_parties": "categorical",
    "residence_since": "numeric",
    "property_magnitude": "categorical",
    "age": "numeric",
    "other_payment_plans": "categorical",
    "housing": "categorical",
    "existing_credits": "numeric",
    "job": "categorical",
    "num_dependents": "numeric",
    "own_telephone": "categorical",
    "foreign_worker": "categorical",
}
GERMAN_LABEL = "class"

SKIP_HINT = (
    "benchmark CSV not present; run scripts/fetch_datasets.py where "
    "network access exists"
)


def have_diabetes() -> bool:
    return os.path.exists(DIABETES_PATH)


def have_german() -> bool:
    return os.path.exists(GERMAN_PATH)


def dataset_config(name: str) -> dict:
    """ExperimentConfig dataset block for a benchmark file."""
    if name == "diabetes":
        return {
            "source": "csv",
            "path": DIABETES_PATH,
            "schema": DIABETES_SCHEMA,
            "label_column": DIABETES_LABEL,
        }
    if name == "german_credit":
        return {
            "source": "csv",
            "path": GERMAN_PATH,
            "schema": GERMAN_SCHEMA,
            "label_column": GERMAN_LABEL,
        }
    raise KeyError(name)
