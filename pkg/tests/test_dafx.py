import itertools
import math

import numpy as np
import pytest

from core import dafx
from core.errors import DimensionMismatch, InvalidSetting, UnknownEffect
from core.types import AudioBuffer, Mapping, ParamSpec, ParamVector

RATE = 8000


def _impulse(n=4096):
    x = np.zeros(n)
    x[0] = 1.0
    return AudioBuffer(x, RATE)


def _theta_for(effect_id, **physical):
    """θ that puts the named parameters at the given physical values (others 0.5)."""
    descriptor = dafx.get_descriptor(effect_id)
    values = []
    for spec in descriptor.params:
        if spec.name not in physical:
            values.append(0.5)
            continue
        v = physical[spec.name]
        if spec.mapping is Mapping.LOGARITHMIC:
            t = math.log(v / spec.physical_min) / math.log(spec.physical_max / spec.physical_min)
        else:
            t = (v - spec.physical_min) / (spec.physical_max - spec.physical_min)
        values.append(t)
    return ParamVector.of(effect_id, values)


def test_registry_order_and_held_out():
    assert dafx.effect_ids()[:6] == ["ambience", "combo", "delay", "dynamics", "overdrive", "ringmod"]
    assert dafx.training_effects() == dafx.effect_ids()[:6]
    assert [d.id for d in dafx.list_effects() if d.held_out] == ["leslie", "multiband", "flanger"]


def test_overdrive_layout():
    assert dafx.get_descriptor("overdrive").param_names == ["muffle", "drive", "output_db"]


def test_unknown_effect_names_valid_ids():
    with pytest.raises(UnknownEffect) as info:
        dafx.get_descriptor("chorus")
    assert "overdrive" in str(info.value)


def test_wrong_theta_length():
    with pytest.raises(DimensionMismatch):
        dafx.process("overdrive", _impulse(), ParamVector.of("overdrive", [0.5, 0.5]))


def test_denormalize_linear_and_log():
    descriptor = dafx.get_descriptor("overdrive")
    muffle, drive, out_db = dafx.denormalize(descriptor, ParamVector.of("overdrive", [0.5, 0.5, 0.5]))
    assert muffle == pytest.approx(0.5)
    assert drive == pytest.approx(10.0)
    assert out_db == pytest.approx(0.0)


def test_param_spec_rejects_bad_log_range():
    with pytest.raises(ValueError):
        ParamSpec("x", 0.0, 1.0, Mapping.LOGARITHMIC)


@pytest.mark.parametrize("values", [[2.0, 0.0, 0.0], [math.nan, 0.5, 0.5]])
def test_out_of_range_theta_is_a_config_error(values):
    with pytest.raises(InvalidSetting) as info:
        ParamVector.of("overdrive", values)
    assert info.value.exit_code == 2
    assert isinstance(info.value, ValueError)


@pytest.mark.parametrize("effect_id", dafx.effect_ids())
def test_length_preserved_and_deterministic(effect_id, rng):
    x = AudioBuffer(0.5 * rng.standard_normal(2048), RATE)
    theta = dafx.random_theta(effect_id, rng)
    a = dafx.process(effect_id, x, theta)
    b = dafx.process(effect_id, x, theta)
    assert len(a) == len(x)
    assert np.array_equal(a.samples, b.samples)
    assert np.all(np.isfinite(a.samples))


@pytest.mark.parametrize("effect_id", dafx.effect_ids())
def test_zero_input_gives_zero_output(effect_id, rng):
    theta = dafx.random_theta(effect_id, rng)
    if effect_id == "combo":
        theta = theta.replace(dafx.get_descriptor("combo").index("bias"), 0.5)
    out = dafx.process(effect_id, AudioBuffer(np.zeros(1024), RATE), theta)
    assert np.allclose(out.samples, 0.0, atol=1e-9)


def _worst_case_inputs(rng, n=1024):
    return {
        "dc": np.ones(n),
        "alternating": np.where(np.arange(n) % 2 == 0, 1.0, -1.0),
        "noise": np.clip(rng.standard_normal(n), -1.0, 1.0),
    }


def _corners(num_params):
    return [np.array(bits, dtype=np.float64) for bits in itertools.product((0.0, 1.0), repeat=num_params)]


@pytest.mark.parametrize("effect_id", dafx.effect_ids())
def test_output_stays_bounded(effect_id, rng):
    num_params = dafx.get_descriptor(effect_id).num_params
    thetas = _corners(num_params) + [dafx.random_theta(effect_id, rng).values for _ in range(256)]
    for name, x in _worst_case_inputs(rng).items():
        buffer = AudioBuffer(x, RATE)
        for values in thetas:
            out = dafx.process(effect_id, buffer, ParamVector.of(effect_id, values))
            assert out.peak <= 16.0, (name, values.tolist())


@pytest.mark.parametrize("effect_id,theta", [
    ("ringmod", [0.0, 1.0, 1.0]),
    ("flanger", [0.0, 0.0, 1.0, 1.0]),
    ("flanger", [1.0, 1.0, 1.0, 1.0]),
])
def test_feedback_loops_stay_bounded_on_dc(effect_id, theta):
    out = dafx.process(effect_id, AudioBuffer(np.ones(24000), 24000), ParamVector.of(effect_id, theta))
    assert out.peak <= 10.0 + 1e-9


def test_random_theta_is_uniform_on_average(rng):
    draws = np.stack([dafx.random_theta("dynamics", rng).values for _ in range(10000)])
    assert draws.min() >= 0.0 and draws.max() <= 1.0
    assert np.allclose(draws.mean(axis=0), 0.5, atol=0.02)


def test_dynamics_without_mix_is_a_pure_trim(rng):
    x = 0.5 * rng.standard_normal(2048)
    theta = _theta_for("dynamics", mix=0.0, output_db=6.0)
    out = dafx.process("dynamics", AudioBuffer(x, RATE), theta).samples
    assert np.allclose(out, x * 10 ** (6.0 / 20.0), atol=1e-12)

@pytest.mark.parametrize("effect_id", ["ambience", "combo", "dynamics", "overdrive", "leslie", "multiband"])
def test_output_db_post_scales(effect_id, rng):
    x = AudioBuffer(0.5 * rng.standard_normal(2048), RATE)
    theta = dafx.random_theta(effect_id, rng)
    index = dafx.get_descriptor(effect_id).index("output_db")
    lo = dafx.process(effect_id, x, theta.replace(index, 0.25))
    hi = dafx.process(effect_id, x, theta.replace(index, 0.75))
    spec = dafx.get_descriptor(effect_id).params[index]
    gain_db = spec.to_physical(0.75) - spec.to_physical(0.25)
    assert np.allclose(hi.samples, lo.samples * 10 ** (gain_db / 20.0), atol=1e-9)


def test_delay_taps_land_at_sample_offsets():
    theta = _theta_for("delay", l_delay_ms=100.0, r_delay=2.0, feedback=0.0, fb_tone_lo_hi=0.5, fb_mix=1.0)
    out = dafx.process("delay", _impulse(), theta).samples
    first, second = round(0.1 * RATE), round(0.2 * RATE)
    assert out[first] == pytest.approx(0.5, abs=1e-9)
    assert out[second] == pytest.approx(0.5, abs=1e-9)
    others = np.delete(out, [first, second])
    assert np.allclose(others, 0.0, atol=1e-9)


def test_ringmod_matches_closed_form(rng):
    x = rng.standard_normal(1024)
    theta = _theta_for("ringmod", freq_hz=440.0, fine_hz=5.0, feedback=0.0)
    out = dafx.process("ringmod", AudioBuffer(x, RATE), theta).samples
    n = np.arange(x.size)
    assert np.allclose(out, x * np.sin(2 * np.pi * 445.0 * n / RATE), atol=1e-5)


def test_describe_is_json_ready():
    doc = dafx.describe("overdrive")
    assert doc["id"] == "overdrive"
    assert [p["name"] for p in doc["params"]] == ["muffle", "drive", "output_db"]
