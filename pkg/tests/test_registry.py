import pytest

from tcpa.properties import Property, PropertyError, PropertyKind, PropertySet
from tcpa.registry import PropertyRegistry, RegistryError, Role
from tcpa.security import keygen

from tests.helpers import DEFAULT_PROPS_TEXT


def test_property_file_parsing():
    props = PropertySet.parse("# header\n\nfirst assertion_unreachable  # trailing\nsecond no_trap index\n")
    assert list(props) == [
        Property("first", PropertyKind.ASSERTION_UNREACHABLE),
        Property("second", PropertyKind.NO_TRAP, "index"),
    ]
    assert props.ids == ["first", "second"]
    assert props.to_text() == "first assertion_unreachable\nsecond no_trap index\n"
    assert PropertySet.from_bytes(props.to_bytes()) == props


@pytest.mark.parametrize("text", [
    "only-an-id\n",
    "p unknown_kind\n",
    "p no_trap f extra\n",
    "p no_trap\np assertion_unreachable\n",
    "bad/id no_trap\n",
])
def test_bad_property_files(text):
    with pytest.raises(PropertyError):
        PropertySet.parse(text)


def test_property_image_must_be_canonical():
    data = PropertySet.parse(DEFAULT_PROPS_TEXT).to_bytes()
    with pytest.raises(PropertyError):
        PropertySet.from_bytes(data + b"\x00")
    with pytest.raises(PropertyError):
        PropertySet.from_bytes(data[:-1])


@pytest.fixture
def parties(rng):
    return keygen(rng), keygen(rng), keygen(rng)


def _registry() -> PropertyRegistry:
    return PropertyRegistry.create(PropertySet.parse(DEFAULT_PROPS_TEXT))


def test_dual_signed_registry_verifies(parties):
    alice, bob, _ = parties
    reg = _registry().sign(Role.PROVIDER, alice).sign(Role.CONSUMER, bob)
    assert reg.verify()
    assert reg.verify(provider_pub=alice.public, consumer_pub=bob.public)
    assert reg.properties.ids == ["no-assert-failure", "never-traps"]


def test_signing_order_does_not_matter(parties):
    alice, bob, _ = parties
    one = _registry().sign(Role.PROVIDER, alice).sign(Role.CONSUMER, bob)
    two = _registry().sign(Role.CONSUMER, bob).sign(Role.PROVIDER, alice)
    assert one == two


def test_incomplete_or_foreign_signatures_fail(parties):
    alice, bob, mallory = parties
    assert not _registry().verify()
    assert not _registry().sign(Role.PROVIDER, alice).verify()
    reg = _registry().sign(Role.PROVIDER, alice).sign(Role.CONSUMER, bob)
    assert not reg.verify(consumer_pub=mallory.public)

    other = PropertyRegistry.create(PropertySet.parse("p no_trap\n")).sign(Role.CONSUMER, bob)
    swapped = PropertyRegistry(reg.p_props, reg.provider_pub, reg.provider_sig,
                               other.consumer_pub, other.consumer_sig)
    assert not swapped.verify()


def test_file_form(parties):
    alice, bob, _ = parties
    reg = _registry().sign(Role.PROVIDER, alice).sign(Role.CONSUMER, bob)
    data = reg.to_bytes()
    assert data[:5] == b"TCPR\x01"
    assert PropertyRegistry.from_bytes(data) == reg
    # an unsigned registry is still a well-formed file
    assert PropertyRegistry.from_bytes(_registry().to_bytes()) == _registry()

    with pytest.raises(RegistryError):
        PropertyRegistry.from_bytes(b"TCPX" + data[4:])
    with pytest.raises(RegistryError):
        PropertyRegistry.from_bytes(b"TCPR\x02" + data[5:])
    with pytest.raises(RegistryError):
        PropertyRegistry.from_bytes(data[:-3])
    with pytest.raises(RegistryError):
        PropertyRegistry.from_bytes(b"TCPR")
