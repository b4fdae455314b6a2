#!/usr/bin/env python3
# -*- coding: utf-8 -*-

from __future__ import annotations
import json
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Type, Union

from . import exceptions


__all__ = [
    "Field",
    "DictBase",
    "ConfigBase"
]


class Field(object):
    """
    A dictionary-backed attribute: reading `obj.name` returns `obj["name"]` (or the field's default), assigning writes
    the key.
    """

    def __init__(
            self,
            default: Any = None,
            *,
            factory: Callable[[], Any] = None,
            nested: Type[ConfigBase] = None,
            doc: str = None
    ) -> None:
        """

        Parameters
        ----------
        default : Any
            The value used when the key is absent. Default `None`.
        factory : Callable[[], Any]
            Builds the default when it is mutable. Takes precedence over `default`.
        nested : Type[ConfigBase]
            A config class the stored value is coerced into (dictionaries are converted on assignment).
        doc : str
            The field's documentation.
        """
        self.default = default
        self.factory = factory
        self.nested = nested
        self.name = None
        self.__doc__ = doc

    def __set_name__(self, owner, name: str) -> None:
        self.name = name

    def __get__(self, instance, owner):
        if instance is None:
            return self
        if self.name not in instance:
            return self.make_default()
        return instance[self.name]

    def __set__(self, instance, value) -> None:
        instance[self.name] = self.coerce(value)

    def make_default(self) -> Any:
        if self.factory is not None:
            return self.factory()
        if self.nested is not None and self.default is None:
            return None
        return self.default

    def coerce(self, value: Any) -> Any:
        if self.nested is not None and isinstance(value, dict) and not isinstance(value, self.nested):
            return self.nested(**value)
        return value


class DictBase(dict):
    """
    Abstract dictionary class.
    """
    def __repr__(self) -> str:
        return f"{self.__class__.__name__}: {super(DictBase, self).__repr__()}"

    @classmethod
    def fields(cls) -> Dict[str, Field]:
        """
        Returns
        -------
        Dict[str, Field] : The declared fields, base classes first.
        """
        res = {}
        for klass in reversed(cls.__mro__):
            for key, val in vars(klass).items():
                if isinstance(val, Field):
                    res[key] = val
        return res

    def to_dict(self) -> Dict:
        """
        Returns
        -------
        Dict : A plain (JSON-serializable) copy, nested records converted recursively.
        """
        def _plain(x: Any) -> Any:
            if isinstance(x, dict):
                return {k: _plain(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [_plain(_) for _ in x]
            if hasattr(x, "tolist") and callable(x.tolist):
                return x.tolist()
            return x
        return _plain(self)


class ConfigBase(DictBase):
    """
    Abstract configuration: a dictionary whose keys are the declared `Field`s. Missing keys are filled with defaults,
    unknown keys are rejected.
    """

    def __init__(self, *args, **kwargs) -> None:
        super(ConfigBase, self).__init__(*args, **kwargs)
        fields = self.fields()
        unknown = sorted(set(self) - set(fields))
        if unknown:
            raise exceptions.ConfigurationError(
                f"Unknown field(s) {unknown} for {self.__class__.__name__}; valid fields are {sorted(fields)}."
            )
        for name, field in fields.items():
            if name in self:
                dict.__setitem__(self, name, field.coerce(self[name]))
            else:
                dict.__setitem__(self, name, field.make_default())

    def validate(self) -> ConfigBase:
        """
        Check the configuration. Nested configurations are validated recursively.

        Returns
        -------
        ConfigBase : The instance itself.

        Raises
        ------
        llcbench.exceptions.ConfigurationError
        """
        for value in self.values():
            if isinstance(value, ConfigBase):
                value.validate()
        return self

    def replace(self, **kwargs) -> ConfigBase:
        """
        Copy with some fields replaced.

        Parameters
        ----------
        kwargs
            The fields to replace.

        Returns
        -------
        ConfigBase : A new instance of the same class.
        """
        return self.__class__(**{**self.to_dict(), **kwargs})

    def dumps(self) -> str:
        """
        Returns
        -------
        str : The configuration as indented, key-sorted JSON.
        """
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def dump(self, path: Union[str, Path]) -> None:
        """
        Write the configuration to a JSON file.

        Parameters
        ----------
        path : Union[str, Path]
            The target file.

        Returns
        -------
        None
        """
        with open(path, "w", encoding="utf-8") as _:
            _.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> ConfigBase:
        """
        Read and validate a configuration from a JSON file.

        Parameters
        ----------
        path : Union[str, Path]
            The source file.

        Returns
        -------
        ConfigBase
        """
        try:
            with open(path, "r", encoding="utf-8") as _:
                data = json.load(_)
        except json.JSONDecodeError as err:
            raise exceptions.ConfigurationError(f"Config file {path} is not valid JSON: {err}.") from err
        except OSError as err:
            raise exceptions.ConfigurationError(f"Config file {path} cannot be read: {err}.") from err
        if not isinstance(data, dict):
            raise exceptions.ConfigurationError(f"Config file {path} must hold a JSON object.")
        return cls(**data).validate()

    @classmethod
    def coerce(cls, value: Optional[Union[Dict, ConfigBase]]) -> ConfigBase:
        """
        Accept either an instance, a plain dictionary or `None` (defaults).

        Returns
        -------
        ConfigBase
        """
        if isinstance(value, cls):
            return value
        return cls(**(value or {}))
