"""
Various utility functions and shortcuts used throughout the application. At
the current time this mostly concerns the spectral step bound and file output.
"""

import csv
import json
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from scipy.linalg import svdvals


def fit_lipschitz(K: np.ndarray) -> float:
    """Largest eigenvalue of 2 K^T K: twice the squared spectral norm."""
    if K.size == 0:
        return 0.0
    return 2.0 * float(svdvals(K)[0]) ** 2


def soft_threshold(u: np.ndarray, a: float) -> np.ndarray:
    """sgn(u) * max(|u| - a, 0), componentwise."""
    return np.sign(u) * np.maximum(np.abs(u) - a, 0.0)


def write_to_json(
    pathname: Union[str, Path],
    data: Union[dict, list],
    format_json: bool = True,
) -> None:
    """
    Write data to a JSON file.
    """
    kwargs = {
        "ensure_ascii": False,
        "sort_keys": True,
    }
    if format_json:
        kwargs["indent"] = 2

    with open(pathname, "w", encoding="utf-8") as file:
        json.dump(data, file, **kwargs)
        file.write("\n")


def read_json(pathname: Union[str, Path]) -> Union[dict, list]:
    with open(pathname, encoding="utf-8") as file:
        return json.load(file)


def write_vector_csv(pathname: Union[str, Path], values: Iterable[float]) -> None:
    """One value per row, 17 significant digits."""
    with open(pathname, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        for value in values:
            writer.writerow([f"{float(value):.17g}"])


def read_vector_csv(pathname: Union[str, Path]) -> np.ndarray:
    with open(pathname, encoding="utf-8", newline="") as file:
        return np.array([float(row[0]) for row in csv.reader(file) if row])
