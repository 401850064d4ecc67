import json
import re
from typing import Callable, List, Sequence, Tuple, Union

import click

from sged import logger
from sged.api.datagen import EditType, Template
from sged.api.policy import LearningCurve
from sged.api.retrieval import EvaluationReport
from sged.api.util import format_number

from .util import json_encode

ANSI_RE = re.compile(r"\033\[((?:\d|;)*)([a-zA-Z])")

Row = Tuple[Callable, Union[List[str], str]]


def _strip_ansi(value):
    return ANSI_RE.sub("", value)


def jsonify(data, *args, **kwargs):
    return json.dumps(data, *args, default=json_encode, **kwargs)


def print_json(data, err=False):
    click.echo(jsonify(data, indent=4), err=err)


def print_rows(rows: Sequence[Row]):
    # Work out the width of each column
    column_widths: List[List[int]] = []

    for _, columns in rows:
        if isinstance(columns, str):
            continue

        for i, column in enumerate(columns):
            if i >= len(column_widths):
                column_widths.append([])
            column_widths[i].append(len(_strip_ansi(column.strip())))

    widths = [max(column) + 4 for column in column_widths]

    for func, columns in rows:
        line = columns

        if not isinstance(columns, str):
            line = "".join(
                "{0}{1}".format(column, " " * (widths[i] - len(_strip_ansi(column))))
                for i, column in enumerate(columns)
            ).rstrip()

        func(line)


def _tsv(columns: Sequence[str]) -> str:
    return "\t".join(columns)


def recall_rows(report: EvaluationReport) -> List[List[str]]:
    """
    One row per template, then per edit type, then overall: group, name, recall@k and
    query count.
    """

    header = ["group", "name", f"recall@{report.k}", "queries"]
    rows = [header]

    for template in Template:
        if template.value in report.by_template:
            rows.append(
                [
                    "template",
                    template.value,
                    format_number(report.by_template[template.value]),
                    str(sum(report.counts[template.value].values())),
                ],
            )

    for edit_type in EditType:
        if edit_type.value in report.by_edit_type:
            count = sum(edits.get(edit_type.value, 0) for edits in report.counts.values())
            rows.append(
                [
                    "edit",
                    edit_type.value,
                    format_number(report.by_edit_type[edit_type.value]),
                    str(count),
                ],
            )

    total = sum(sum(edits.values()) for edits in report.counts.values())
    rows.append(["overall", "all", format_number(report.overall), str(total)])
    return rows


def print_recall_table(report: EvaluationReport):
    rows = recall_rows(report)

    for row in rows:
        click.echo(_tsv(row))

    logger.info("--> Recall@{0}:".format(report.k))
    print_rows(
        [(logger.info, [click.style(column, bold=True) for column in rows[0]])]
        + [(logger.info, row) for row in rows[1:]],
    )


def curve_rows(curve: LearningCurve) -> List[List[str]]:
    rows = [["iteration", "mean_reward", "validation_reward"]]
    for point in curve.points:
        rows.append(
            [
                str(point.iteration),
                format_number(point.mean_reward),
                "-" if point.validation_reward is None else format_number(point.validation_reward),
            ],
        )
    return rows


def print_curve(curve: LearningCurve):
    for row in curve_rows(curve):
        click.echo(_tsv(row))
