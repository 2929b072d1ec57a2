from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from tcpa.bench import CORPUS_DIR
from tcpa.models import AnalyzerConfig, BuilderConfig, ExploreBounds
from tcpa.properties import PropertySet
from tcpa.security import Randomness
from tcpa.tee import Manufacturer, Platform, load_ic, platform_setup
from tcpa.text import assemble

from tests.helpers import DEFAULT_PROPS_TEXT, corpus_source


@pytest.fixture
def rng() -> Randomness:
    return Randomness(20240611)


@pytest.fixture
def corpus() -> Path:
    return CORPUS_DIR


@dataclass
class World:
    """A manufacturer, one platform and the measured images of a session."""

    manufacturer: Manufacturer
    platform: Platform
    rng: Randomness
    x_code: bytes
    b_config: bytes
    p_props: bytes

    @property
    def rot_pub(self) -> bytes:
        return self.manufacturer.rot_pub

    @property
    def images(self) -> tuple[bytes, bytes, bytes]:
        return self.x_code, self.b_config, self.p_props

    def load(self, **kwargs) -> str:
        ic_id, _ = load_ic(self.platform, self.x_code, self.b_config, self.p_props, **kwargs)
        return ic_id

    def program(self, name: str) -> tuple[bytes, bytes]:
        """Source S and honestly built executable E of a corpus program."""
        source = corpus_source(name)
        _, executable, _ = assemble(source)
        return source.encode("utf-8"), executable


@pytest.fixture
def world(rng: Randomness) -> World:
    man = Manufacturer(rng)
    platform = platform_setup(man, rng)
    x_code = AnalyzerConfig(bounds=ExploreBounds(max_paths=64)).to_yaml()
    return World(man, platform, rng, x_code, BuilderConfig().to_bytes(),
                 PropertySet.parse(DEFAULT_PROPS_TEXT).to_bytes())
