"""Keyvalues-based configuration system.

A list of options are passed in, which parse each option to a basic type. TOML and JSON documents
are converted into a Keyvalues tree first, so every format goes through the same parser.
"""
from typing import (
    IO, Any, Dict, Generic, Iterable, List, Mapping, Optional, Tuple, Type,
    TypeVar, Union, overload,
)
from typing_extensions import TypeAlias
from pathlib import Path
import inspect
import json

from srctools import Keyvalues, conv_bool
from srctools.logger import get_logger
import attrs

from .errors import ConfigError


LOGGER = get_logger(__name__)


Option: TypeAlias = Union[str, int, float, bool, Keyvalues]
OptionT = TypeVar('OptionT', bound=Option)

TYPE_NAMES: Dict[Type[Option], str] = {
    str: 'Text',
    int: 'Whole Number',
    float: 'Decimal Number',
    bool: 'True/False',
    Keyvalues: 'Keyvalues Block',
}


@attrs.define(init=False)
class Opt(Generic[OptionT]):
    """A type of option that can be chosen.
    """
    id: str
    name: str
    kind: Type[OptionT]
    doc: List[str]

    def __init__(
        self,
        opt_id: str,
        kind: Type[OptionT],
        doc: str,
    ) -> None:
        self.kind = kind
        self.id = opt_id.casefold()
        self.name = opt_id
        # Remove indentation, and trailing carriage return
        self.doc = inspect.cleandoc(doc).rstrip().splitlines()

    @classmethod
    def block(cls, opt_id: str, default: Keyvalues, doc: str) -> 'OptWithDefault[Keyvalues]':
        """Return an option giving the raw keyvalues block."""
        return OptWithDefault(opt_id, Keyvalues, default.copy(), doc)

    @classmethod
    def string_or_none(cls, opt_id: str, doc: str) -> 'Opt[str]':
        """Return a string-type option, with no default."""
        return Opt(opt_id, str, doc)

    @classmethod
    def string(cls, opt_id: str, default: str, doc: str) -> 'OptWithDefault[str]':
        """Return a string-type option."""
        return OptWithDefault(opt_id, str, default, doc)

    @classmethod
    def boolean(cls, opt_id: str, default: bool, doc: str) -> 'OptWithDefault[bool]':
        """Return a boolean-type option."""
        return OptWithDefault(opt_id, bool, default, doc)

    @classmethod
    def integer(cls, opt_id: str, default: int, doc: str) -> 'OptWithDefault[int]':
        """Return an integer-type option."""
        return OptWithDefault(opt_id, int, default, doc)

    @classmethod
    def floating(cls, opt_id: str, default: float, doc: str) -> 'OptWithDefault[float]':
        """Return a float-type option."""
        return OptWithDefault(opt_id, float, default, doc)


@attrs.define(init=False)  # __attrs_init__() is incompatible with the superclass.
class OptWithDefault(Opt[OptionT], Generic[OptionT]):  # type: ignore[override]
    """An option, with a default."""
    default: OptionT

    def __init__(
        self,
        opt_id: str,
        kind: Type[OptionT],
        default: OptionT,
        doc: str,
    ) -> None:
        super().__init__(opt_id, kind, doc)
        self.default = default


def _scalar(value: Any) -> str:
    """Convert a TOML/JSON scalar to the string Keyvalues stores."""
    if isinstance(value, bool):
        return '1' if value else '0'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def mapping_to_keyvalues(name: Optional[str], data: Mapping[str, Any]) -> Keyvalues:
    """Convert a parsed TOML or JSON document into a Keyvalues tree.

    Nested tables become blocks, and lists become comma-separated values.
    """
    children = []
    for key, value in data.items():
        if isinstance(value, Mapping):
            children.append(mapping_to_keyvalues(key, value))
        elif isinstance(value, (list, tuple)):
            if any(isinstance(item, (Mapping, list, tuple)) for item in value):
                raise ConfigError(f'Option "{key}" may only hold a flat list!')
            children.append(Keyvalues(key, ', '.join(map(_scalar, value))))
        elif value is None:
            raise ConfigError(f'Option "{key}" has no value!')
        else:
            children.append(Keyvalues(key, _scalar(value)))
    return Keyvalues(name, children)


def _toml_value(value: Union[str, int, float, bool]) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (int, float)):
        return repr(value)
    # TOML basic strings share JSON's escapes.
    return json.dumps(value)


class Options:
    """The values of a fixed set of options, read from a Keyvalues tree."""
    defaults: List[Opt]
    settings: Dict[str, Optional[Option]]
    path: Optional[Path]

    def __init__(self, defaults: Union[Iterable[Opt], Mapping[str, object]]) -> None:
        if isinstance(defaults, Mapping):
            # A module namespace, pick out the options.
            defaults = [opt for opt in defaults.values() if isinstance(opt, Opt)]
        self.defaults = list(defaults)
        seen: Dict[str, Opt] = {}
        for opt in self.defaults:
            if opt.id in seen:
                raise ConfigError(f'Option "{opt.name}" is defined twice!')
            seen[opt.id] = opt
        self.settings = {}
        self.path = None

    @staticmethod
    def _default(option: Opt) -> Optional[Option]:
        return option.default if isinstance(option, OptWithDefault) else None

    def _convert(self, option: Opt[OptionT], kv: Keyvalues) -> Option:
        """Parse one given value into the option's type."""
        if option.kind is Keyvalues:
            if not kv.has_children() and kv.value:
                raise ConfigError(f'"{option.name}" must be a block, not "{kv.value}"!')
            return kv.copy()
        if kv.has_children():
            raise ConfigError(f'"{option.name}" must be a single value, not a block!')
        parsed: Optional[Option]
        try:
            parsed = conv_bool(kv.value, None) if option.kind is bool else option.kind(kv.value)
        except ValueError:
            parsed = None
        if parsed is None:
            raise ConfigError(f'"{option.name}" must be a {TYPE_NAMES[option.kind]}, not "{kv.value}"!')
        return parsed

    def load(self, tree: Keyvalues) -> None:
        """Read settings from every block in the tree. Later values win."""
        given: Dict[str, Keyvalues] = {kv.name: kv for block in tree for kv in block}
        self.settings = {
            opt.id: self._convert(opt, given.pop(opt.id)) if opt.id in given else self._default(opt)
            for opt in self.defaults
        }
        if given:
            LOGGER.warning('Extra config options: {}', ', '.join(sorted(given)))

    @overload
    def get(self, option: OptWithDefault[OptionT]) -> OptionT: ...
    @overload
    def get(self, option: Opt[OptionT]) -> Optional[OptionT]: ...

    def get(self, option: Opt[OptionT]) -> Optional[Option]:
        """Fetch an option's value. Blocks are copies, and an unset block is empty."""
        try:
            value = self.settings[option.id]
        except KeyError:
            raise LookupError(f'Option "{option.name}" was never loaded!') from None
        if option.kind is Keyvalues:
            return value.copy() if isinstance(value, Keyvalues) else Keyvalues(option.name, [])
        return value

    def _current(self, option: Opt) -> Tuple[Any, Any]:
        """The default and the current value of an option."""
        default = self._default(option)
        return default, self.settings.get(option.id, default)

    def save(self, file: IO[str]) -> None:
        """Write the current config out as Keyvalues, with descriptions as comments."""
        file.write('"Config"\n\t{\n')
        for ind, option in enumerate(self.defaults):
            if ind != 0:
                file.write('\n')
            file.writelines(f'\t// {line}\n' for line in option.doc)
            default, value = self._current(option)
            if value is None:
                file.write(f'\t// "{option.name}" ""\n')
                continue
            if isinstance(value, Keyvalues):
                kv = value.copy()
                kv.name = option.name
            else:
                if default is not None:
                    file.write(f'\t// Default Value: "{_scalar(default)}"\n')
                kv = Keyvalues(option.name, _scalar(value))
            kv.serialise(file, start_indent='\t')
        file.write('\t}\n')

    def save_toml(self, file: IO[str]) -> None:
        """Write the current config out as TOML, with descriptions as comments.

        Blocks become tables, which TOML requires to follow the plain keys.
        """
        scalars = [opt for opt in self.defaults if opt.kind is not Keyvalues]
        blocks = [opt for opt in self.defaults if opt.kind is Keyvalues]
        for ind, option in enumerate(scalars):
            if ind != 0:
                file.write('\n')
            for line in option.doc:
                file.write(f'# {line}\n')
            default, value = self._current(option)
            if isinstance(option, OptWithDefault):
                file.write(f'# Default Value: {_toml_value(default)}\n')
            if value is None:
                file.write(f'# {option.name} = ""\n')
            else:
                file.write(f'{option.name} = {_toml_value(value)}\n')

        for option in blocks:
            file.write('\n')
            for line in option.doc:
                file.write(f'# {line}\n')
            _, value = self._current(option)
            file.write(f'[{option.name}]\n')
            for kv in value or ():
                if kv.has_children():
                    raise ConfigError(f'"{option.name}" cannot be written to TOML, it holds nested blocks!')
                file.write(f'{json.dumps(kv.real_name)} = {json.dumps(kv.value)}\n')

    def save_json(self, file: IO[str]) -> None:
        """Write the current config out as JSON. JSON has no comments, so the docs are lost."""
        data: Dict[str, Any] = {}
        for option in self.defaults:
            _, value = self._current(option)
            if isinstance(value, Keyvalues):
                data[option.name] = {kv.real_name: kv.value for kv in value}
            elif value is not None:
                data[option.name] = value
        json.dump(data, file, indent='\t')
        file.write('\n')
