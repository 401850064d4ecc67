"""
The edit-program language. A program is a fixed-length sequence of tokens emitted
edit-first and executed in reverse (see ``sged.api.engine``), padded with ``NULL``:

    remove, filter_size[large], filter_shape[cube], relate[right], filter_color[purple]

Reads: start from every object, keep the purple one, move to the objects on its right,
keep the large cubes, remove them.
"""

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Tuple

from .exceptions import ProgramError, ProgramParseError, ProgramVariantError
from .scene import GRID_CELLS, VALUE_TO_ATTRIBUTE, VOCABULARIES, RelationLabel, Variant

DEFAULT_PROGRAM_LENGTH = 12


class Opcode(str, Enum):
    SCENE = "scene"
    FILTER_SHAPE = "filter_shape"
    FILTER_SIZE = "filter_size"
    FILTER_COLOR = "filter_color"
    FILTER_MATERIAL = "filter_material"
    RELATE = "relate"
    LOCATION = "location"
    INTERSECT = "intersect"
    REMOVE = "remove"
    ADD = "add"
    MAKE = "make"
    NULL = "NULL"


EDIT_OPCODES = frozenset((Opcode.REMOVE, Opcode.ADD, Opcode.MAKE))

FILTER_ATTRIBUTES = {
    Opcode.FILTER_SHAPE: "shape",
    Opcode.FILTER_SIZE: "size",
    Opcode.FILTER_COLOR: "color",
    Opcode.FILTER_MATERIAL: "material",
}

ATTRIBUTE_FILTERS = {attribute: opcode for opcode, attribute in FILTER_ATTRIBUTES.items()}

NO_ARGUMENT_OPCODES = frozenset((Opcode.SCENE, Opcode.INTERSECT, Opcode.REMOVE, Opcode.NULL))

# Location phrases as they appear in query text
LOCATION_PHRASES = {
    "TL": "top-left",
    "TM": "top-center",
    "TR": "top-right",
    "ML": "middle-left",
    "MM": "center",
    "MR": "middle-right",
    "BL": "bottom-left",
    "BM": "bottom-center",
    "BR": "bottom-right",
}

TOKEN_REGEX = re.compile(r"^([A-Za-z_]+)(?:\[(.*)\])?$")


@dataclass(frozen=True)
class ProgramToken:
    opcode: Opcode
    args: Tuple[str, ...] = ()

    @property
    def arg(self) -> Optional[str]:
        return self.args[0] if self.args else None

    @property
    def is_edit(self) -> bool:
        return self.opcode in EDIT_OPCODES

    @property
    def is_pad(self) -> bool:
        return self.opcode is Opcode.NULL

    def render(self) -> str:
        if self.opcode is Opcode.ADD and not self.args:
            return self.opcode.value
        if self.args:
            return "{0}[{1}]".format(self.opcode.value, ",".join(self.args))
        return self.opcode.value

    def __str__(self):
        return self.render()


NULL_TOKEN = ProgramToken(Opcode.NULL)


def check_token(token: ProgramToken, index: int = 0) -> None:
    opcode = token.opcode
    where = f"token {index} ({token.render()})"

    if opcode in NO_ARGUMENT_OPCODES:
        if token.args:
            raise ProgramParseError(f"{where}: `{opcode.value}` takes no argument")
        return

    if opcode is Opcode.ADD:
        seen = set()
        for value in token.args:
            attribute = VALUE_TO_ATTRIBUTE.get(value)
            if attribute is None:
                raise ProgramParseError(f"{where}: unknown attribute value: {value!r}")
            if attribute in seen:
                raise ProgramParseError(f"{where}: {attribute} given twice")
            seen.add(attribute)
        return

    if len(token.args) != 1:
        raise ProgramParseError(f"{where}: `{opcode.value}` takes exactly one argument")

    arg = token.args[0]

    if opcode in FILTER_ATTRIBUTES:
        vocabulary = VOCABULARIES[FILTER_ATTRIBUTES[opcode]]
        if arg not in vocabulary:
            raise ProgramParseError(
                "{0}: expected one of {1}".format(where, ", ".join(vocabulary)),
            )
    elif opcode is Opcode.MAKE:
        if arg not in VALUE_TO_ATTRIBUTE:
            raise ProgramParseError(f"{where}: unknown attribute value: {arg!r}")
    elif opcode is Opcode.RELATE:
        if arg not in [label.value for label in RelationLabel]:
            raise ProgramParseError(
                "{0}: expected one of {1}".format(
                    where,
                    ", ".join(label.value for label in RelationLabel),
                ),
            )
    elif opcode is Opcode.LOCATION:
        if arg not in GRID_CELLS:
            raise ProgramParseError(
                "{0}: expected one of {1}".format(where, ", ".join(GRID_CELLS)),
            )


@dataclass(frozen=True)
class Program:
    tokens: Tuple[ProgramToken, ...]

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, index):
        return self.tokens[index]

    def non_pad(self) -> Tuple[ProgramToken, ...]:
        return tuple(token for token in self.tokens if not token.is_pad)

    @property
    def edit(self) -> Optional[ProgramToken]:
        if self.tokens and self.tokens[0].is_edit:
            return self.tokens[0]
        return None

    def render(self) -> str:
        return render_program(self)

    def __str__(self):
        return self.render()


def make_program(
    tokens: Iterable[ProgramToken],
    length: int = DEFAULT_PROGRAM_LENGTH,
) -> Program:
    """
    Validate a token sequence and pad it with NULL up to ``length``.
    """

    tokens = list(tokens)

    if len(tokens) > length:
        raise ProgramError(f"program has {len(tokens)} tokens, longer than length {length}")

    seen_pad = False
    locations = 0

    for i, token in enumerate(tokens):
        check_token(token, i)

        if token.is_pad:
            seen_pad = True
            continue

        if seen_pad:
            raise ProgramError(f"token {i} ({token.render()}): NULL padding must be a suffix")

        if token.is_edit and i != 0:
            if any(earlier.is_edit for earlier in tokens[:i]):
                raise ProgramError(f"token {i} ({token.render()}): more than one edit token")
            raise ProgramError(
                f"token {i} ({token.render()}): the edit token must be emitted first",
            )

        if token.opcode is Opcode.LOCATION:
            locations += 1
            if locations > 1:
                raise ProgramError(f"token {i} ({token.render()}): more than one location")

    tokens.extend([NULL_TOKEN] * (length - len(tokens)))
    return Program(tokens=tuple(tokens))


def parse_token(text: str, index: int = 0) -> ProgramToken:
    text = text.strip()
    matches = TOKEN_REGEX.match(text)
    if not matches:
        raise ProgramParseError(f"token {index}: invalid token: {text!r}")

    name, raw_args = matches.groups()

    if name.upper() == Opcode.NULL.value:
        opcode = Opcode.NULL
    else:
        try:
            opcode = Opcode(name.lower())
        except ValueError:
            raise ProgramParseError(f"token {index}: unknown opcode: {name!r}")

    args: Tuple[str, ...] = ()
    if raw_args is not None:
        args = tuple(arg.strip() for arg in raw_args.split(","))
        if any(not arg for arg in args):
            raise ProgramParseError(f"token {index}: empty argument in {text!r}")

        if opcode is Opcode.LOCATION:
            # Accept `B-L` style cells as well as `BL`
            args = tuple(arg.replace("-", "").upper() for arg in args)
        else:
            args = tuple(arg.lower() for arg in args)

    token = ProgramToken(opcode=opcode, args=args)
    check_token(token, index)
    return token


def parse_program(text: str, length: int = DEFAULT_PROGRAM_LENGTH) -> Program:
    """
    Parse a comma and/or newline separated token listing into a padded ``Program``.
    """

    # Split on commas outside brackets (add[small,cube] carries commas)
    bits = [bit for bit in re.split(r",(?![^\[]*\])|\n", text) if bit.strip()]
    tokens = [parse_token(bit, i) for i, bit in enumerate(bits)]
    return make_program(tokens, length=length)


def render_program(program: Program) -> str:
    tokens = program.non_pad()
    if not tokens:
        return Opcode.NULL.value
    return ", ".join(token.render() for token in tokens)


def validate_for_variant(program: Program, variant: Variant) -> None:
    """
    Raise ``ProgramVariantError`` naming the first token that cannot run on graphs of
    ``variant``: grid graphs have no edges and no material, relational graphs no cells.
    """

    for i, token in enumerate(program.tokens):
        where = f"token {i} ({token.render()})"

        if variant is Variant.GRID:
            if token.opcode is Opcode.RELATE:
                raise ProgramVariantError(f"{where}: grid scenes have no relations")
            if token.opcode is Opcode.FILTER_MATERIAL:
                raise ProgramVariantError(f"{where}: grid scenes have no material")
            if token.opcode in (Opcode.MAKE, Opcode.ADD) and any(
                VALUE_TO_ATTRIBUTE.get(arg) == "material" for arg in token.args
            ):
                raise ProgramVariantError(f"{where}: grid scenes have no material")

        elif token.opcode is Opcode.LOCATION:
            raise ProgramVariantError(f"{where}: relational scenes have no grid locations")


def check_program(program: Program, variant: Variant) -> Optional[str]:
    """
    Like ``validate_for_variant`` but return the error message (or ``None``).
    """

    try:
        validate_for_variant(program, variant)
    except ProgramVariantError as e:
        return str(e)
    return None


def tokenize_query(text: str) -> List[str]:
    return re.findall(r"[a-z0-9]+", text.lower())
