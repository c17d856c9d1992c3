"""Activity vocabulary and categorical label schema.

Token layout is fixed: index 0 is the start-of-sequence token, index 1 the
end-of-sequence token, activity tokens follow in alphabetical order. Keeping
the layout stable makes every serialized artifact (CSVs, checkpoints, vocab
manifests) byte-reproducible across runs.
"""

from __future__ import annotations

from pathlib import Path

SOS = 0
EOS = 1
SOS_NAME = "<sos>"
EOS_NAME = "<eos>"

DAY_MINUTES = 1440

# alphabetical, per the default token layout
DEFAULT_ACTIVITIES = (
    "education",
    "escort",
    "home",
    "medical",
    "other",
    "shop",
    "visit",
    "work",
)


class ActivityVocab:
    """Dense token index over activity names plus the two special tokens."""

    def __init__(self, activities: tuple[str, ...] = DEFAULT_ACTIVITIES):
        names = list(activities)
        if len(set(names)) != len(names):
            raise ValueError("duplicate activity names")
        for reserved in (SOS_NAME, EOS_NAME):
            if reserved in names:
                raise ValueError(f"reserved token name {reserved!r}")
        self.activities = tuple(names)
        self._tokens = (SOS_NAME, EOS_NAME) + self.activities
        self._index = {name: i for i, name in enumerate(self._tokens)}

    @property
    def size(self) -> int:
        """Total token count N_a, specials included."""
        return len(self._tokens)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown activity name {name!r}") from None

    def name(self, token: int) -> str:
        return self._tokens[token]

    def is_special(self, token: int) -> bool:
        return token in (SOS, EOS)

    def activity_tokens(self) -> range:
        return range(2, self.size)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ActivityVocab) and other.activities == self.activities

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self._tokens))

    @classmethod
    def load(cls, path: str | Path) -> "ActivityVocab":
        tokens = Path(path).read_text().splitlines()
        if len(tokens) < 3 or tokens[0] != SOS_NAME or tokens[1] != EOS_NAME:
            raise ValueError(f"malformed vocabulary manifest {path}")
        return cls(tuple(tokens[2:]))


DEFAULT_VOCAB = ActivityVocab()


class LabelSchema:
    """Ordered categorical label variables, each with a fixed category list."""

    def __init__(self, variables: list[tuple[str, tuple[str, ...]]]):
        if not variables:
            raise ValueError("empty label schema")
        self.variables = [(name, tuple(cats)) for name, cats in variables]
        names = [name for name, _ in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate label variable names")
        self._cat_index = {
            name: {c: i for i, c in enumerate(cats)} for name, cats in self.variables
        }

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.variables]

    @property
    def sizes(self) -> list[int]:
        return [len(cats) for _, cats in self.variables]

    def __len__(self) -> int:
        return len(self.variables)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelSchema) and other.variables == self.variables

    def categories(self, name: str) -> tuple[str, ...]:
        for var, cats in self.variables:
            if var == name:
                return cats
        raise KeyError(f"unknown label variable {name!r}")

    def encode(self, values: dict[str, str] | list[str]) -> tuple[int, ...]:
        """Map category strings to a token-per-variable vector."""
        if isinstance(values, dict):
            values = [values[name] for name in self.names]
        if len(values) != len(self.variables):
            raise ValueError(
                f"expected {len(self.variables)} label values, got {len(values)}"
            )
        out = []
        for (name, _), value in zip(self.variables, values):
            try:
                out.append(self._cat_index[name][value])
            except KeyError:
                raise KeyError(f"unknown category {value!r} for {name!r}") from None
        return tuple(out)

    def decode(self, vector: tuple[int, ...]) -> list[str]:
        return [cats[tok] for (_, cats), tok in zip(self.variables, vector)]

    def validate(self, vector: tuple[int, ...]) -> None:
        if len(vector) != len(self.variables):
            raise ValueError("label vector length does not match schema")
        for (name, cats), tok in zip(self.variables, vector):
            if not 0 <= tok < len(cats):
                raise ValueError(f"label token {tok} out of range for {name!r}")

    def subset(self, names: list[str]) -> "LabelSchema":
        keep = set(names)
        unknown = keep - set(self.names)
        if unknown:
            raise KeyError(f"unknown label variables {sorted(unknown)}")
        return LabelSchema([(n, c) for n, c in self.variables if n in keep])

    def save(self, path: str | Path) -> None:
        # one line per variable: name then categories, tab separated, index order
        lines = ["\t".join((name,) + cats) for name, cats in self.variables]
        Path(path).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, path: str | Path) -> "LabelSchema":
        variables = []
        for line in Path(path).read_text().splitlines():
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"malformed schema manifest {path}")
            variables.append((parts[0], tuple(parts[1:])))
        return cls(variables)


DEFAULT_LABEL_SCHEMA = LabelSchema(
    [
        ("gender", ("male", "female", "unknown")),
        ("age", ("0-4", "5-10", "11-15", "16-19", "20-29", "30-39", "40-49", "50-69", "70+")),
        ("car_access", ("yes", "no", "unknown")),
        ("work_status", ("employed", "education", "unemployed")),
        ("income", ("highest", "high", "medium", "low", "lowest")),
    ]
)
