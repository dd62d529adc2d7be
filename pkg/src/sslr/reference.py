"""Published WLASL-100 reference accuracies used as table annotations.

The harness emits result tables in a fixed layout; these constants define
that layout (fractions x class counts, supervised vs self-trained column
pairs, the five ablation toggle rows) and carry the reference accuracies
reported on WLASL-100 as annotations for side-by-side reading. They are
annotations only, never assertions: results on other datasets differ.
"""

from __future__ import annotations

LABEL_FRACTIONS = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75)
CLASS_COUNTS = (5, 20, 40, 60, 80, 100)
MODES = ("fsl", "ssl")

# 100-class reference accuracies per labeled fraction: fraction -> (fsl, ssl).
REFERENCE_BY_FRACTION: dict[float, tuple[float, float]] = {
    0.01: (7.0, 7.0),
    0.05: (7.0, 7.0),
    0.10: (8.1, 9.7),
    0.25: (22.5, 21.3),
    0.50: (35.3, 36.8),
    0.75: (48.1, 48.4),
}

# Full grid: (fraction, class count) -> (fsl, ssl) reference accuracies.
REFERENCE_BY_CLASSES: dict[tuple[float, int], tuple[float, float]] = {
    (0.01, 5): (25.0, 60.0), (0.01, 20): (26.2, 21.5), (0.01, 40): (2.5, 2.5),
    (0.01, 60): (12.0, 10.8), (0.01, 80): (9.8, 10.7), (0.01, 100): (7.0, 7.0),
    (0.05, 5): (25.0, 60.0), (0.05, 20): (29.2, 21.5), (0.05, 40): (2.5, 2.5),
    (0.05, 60): (12.0, 10.8), (0.05, 80): (9.8, 10.7), (0.05, 100): (7.0, 7.0),
    (0.10, 5): (65.0, 50.0), (0.10, 20): (24.6, 29.2), (0.10, 40): (6.7, 5.9),
    (0.10, 60): (10.8, 6.0), (0.10, 80): (8.9, 8.9), (0.10, 100): (8.1, 9.7),
    (0.25, 5): (60.0, 55.0), (0.25, 20): (46.2, 44.6), (0.25, 40): (22.7, 24.4),
    (0.25, 60): (32.3, 28.1), (0.25, 80): (29.0, 25.2), (0.25, 100): (22.5, 21.3),
    (0.50, 5): (60.0, 70.0), (0.50, 20): (60.0, 53.8), (0.50, 40): (36.1, 47.1),
    (0.50, 60): (46.7, 47.3), (0.50, 80): (45.8, 37.9), (0.50, 100): (35.3, 36.8),
    (0.75, 5): (65.0, 70.0), (0.75, 20): (61.5, 63.1), (0.75, 40): (42.9, 47.9),
    (0.75, 60): (50.9, 49.7), (0.75, 80): (45.3, 51.4), (0.75, 100): (48.1, 48.4),
}

# Ablation toggle rows, cumulative: nothing; +normalization; +noise;
# +rotation; +shear (everything). Each row: (shear, rotation, noise,
# normalization, reference val accuracy, reference test accuracy).
ABLATION_ROWS: tuple[tuple[bool, bool, bool, bool, float, float], ...] = (
    (False, False, False, False, 29.8, 46.2),
    (False, False, False, True, 61.9, 58.5),
    (False, False, True, True, 58.3, 56.9),
    (False, True, True, True, 60.7, 58.5),
    (True, True, True, True, 63.1, 63.1),
)


def fraction_percent(fraction: float) -> str:
    """0.01 -> '1%', 0.10 -> '10%'."""
    return f"{fraction * 100:g}%"


def by_classes_header(class_counts=CLASS_COUNTS) -> list[str]:
    header = ["labeled_data"]
    for count in class_counts:
        header.extend([f"{count}_fsl", f"{count}_ssl"])
    return header


def by_fraction_header(fractions=LABEL_FRACTIONS) -> list[str]:
    return ["labeled_data"] + [fraction_percent(f) for f in fractions]


def golden_by_classes_rows() -> list[list[str]]:
    """Reference-annotated grid in the emitted layout (values are annotations)."""
    rows = [by_classes_header()]
    for fraction in LABEL_FRACTIONS:
        row = [fraction_percent(fraction)]
        for count in CLASS_COUNTS:
            fsl, ssl = REFERENCE_BY_CLASSES[(fraction, count)]
            row.extend([f"{fsl}", f"{ssl}"])
        rows.append(row)
    return rows


def golden_by_fraction_rows() -> list[list[str]]:
    rows = [by_fraction_header()]
    for mode_index, mode in enumerate(("FSL", "SSL")):
        row = [mode]
        for fraction in LABEL_FRACTIONS:
            row.append(f"{REFERENCE_BY_FRACTION[fraction][mode_index]}")
        rows.append(row)
    return rows
