"""Model assembly, initialization, forward pass, and the container format."""

import struct

import numpy as np
import pytest

from floodseg.model import (FORMAT_VERSION, MAGIC, Model, ModelFormatError,
                            ModelSpec, SpecError, build_model, init_params,
                            load_model, model_checksum, save_model,
                            serialize_model)
from floodseg.tensor import ShapeError, Tensor


def count_oracle(spec: ModelSpec) -> int:
    """Independent parameter enumeration from the architecture arithmetic."""
    total = 0
    c = 3
    for w in spec.widths:
        total += w * c * 9 + w           # 3x3 conv + bias
        total += w * w * 9 + w           # 3x3 dilated conv + bias
        c = w
    if spec.variant == "gac-unet":
        total += spec.gat_out * spec.widths[-1]          # attention projection
        total += 2 * spec.gat_out                        # edge scorer
        total += (spec.cheb_order + 1) * spec.cheb_out * spec.gat_out
        below = spec.cheb_out + (2 if spec.com else 0)
    else:
        below = spec.widths[-1]
    for w in reversed(spec.widths):
        total += w * (below + w) * 9 + w                 # decoder conv + bias
        below = w
    total += spec.out_channels * below + spec.out_channels   # 1x1 head
    return total


def small_spec(**kw):
    base = dict(input_size=16, widths=(2, 3), gat_out=3, cheb_order=2, cheb_out=3)
    base.update(kw)
    return ModelSpec(**base)


# ---- parameter bookkeeping ---------------------------------------------------


def test_parameter_count_hand_case():
    spec = ModelSpec(input_size=64, widths=(8,), gat_out=8, cheb_order=2, cheb_out=8)
    model = build_model(spec)
    # enc: 8*3*9+8 + 8*8*9+8; gat: 64+16; cheb: 3*64; dec: 8*18*9+8; head: 8+1
    assert model.parameter_count() == 2393
    assert count_oracle(spec) == 2393


def test_parameter_count_matches_oracle_across_specs():
    rng = np.random.RandomState(0)
    for _ in range(12):
        stages = rng.randint(1, 4)
        widths = tuple(int(rng.randint(2, 7)) for _ in range(stages))
        spec = ModelSpec(input_size=8 * 2 ** stages, widths=widths,
                         variant=rng.choice(["gac-unet", "plain-unet"]),
                         gat_out=int(rng.randint(1, 5)),
                         cheb_order=int(rng.randint(0, 4)),
                         cheb_out=int(rng.randint(1, 5)),
                         com=bool(rng.randint(0, 2)),
                         out_channels=int(rng.randint(1, 4)))
        assert build_model(spec).parameter_count() == count_oracle(spec)


def test_parameters_are_declared_in_stage_order():
    model = build_model(small_spec())
    assert list(model.params) == [
        "enc1.conv.w", "enc1.conv.b", "enc1.dil.w", "enc1.dil.b",
        "enc2.conv.w", "enc2.conv.b", "enc2.dil.w", "enc2.dil.b",
        "gat.weight", "gat.attn",
        "cheb.theta0", "cheb.theta1", "cheb.theta2",
        "dec2.conv.w", "dec2.conv.b", "dec1.conv.w", "dec1.conv.b",
        "head.w", "head.b",
    ]
    plain = build_model(small_spec(variant="plain-unet"))
    assert [n for n in plain.params if n.startswith(("gat", "cheb"))] == []


# ---- spec validation -----------------------------------------------------------


def test_spec_zero_widths_resolve_to_deepest_encoder():
    spec = ModelSpec(input_size=32, widths=(4, 6))
    assert spec.gat_out == 6 and spec.cheb_out == 6
    assert spec.stages == 2 and spec.grid_size == 8
    assert spec.bottleneck_channels == 6 + 2


def test_spec_rejects_bad_configurations():
    with pytest.raises(SpecError):
        ModelSpec(widths=())
    with pytest.raises(SpecError):
        ModelSpec(widths=(4, 0))
    with pytest.raises(SpecError):
        ModelSpec(variant="resnet")
    with pytest.raises(SpecError):
        ModelSpec(input_size=100, widths=(4, 4, 4))     # not divisible by 8
    with pytest.raises(SpecError):
        ModelSpec(connectivity=6)
    with pytest.raises(SpecError):
        ModelSpec(cheb_order=-1)
    with pytest.raises(SpecError):
        ModelSpec(out_channels=0)
    with pytest.raises(SpecError):
        build_model(ModelSpec(input_size=32, widths=(4,)), dtype=np.int32)


def test_spec_json_round_trip():
    spec = small_spec(com=False, out_channels=2, seed=9)
    assert ModelSpec.from_json(spec.to_json()) == spec
    with pytest.raises(ModelFormatError):
        ModelSpec.from_json("{broken")
    with pytest.raises(ModelFormatError):
        ModelSpec.from_json('{"widths": [4], "variant": "nope", "input_size": 16}')


# ---- initialization --------------------------------------------------------------


def test_init_is_deterministic_and_bounded():
    a = init_params(build_model(small_spec()), seed=3)
    b = init_params(build_model(small_spec()), seed=3)
    c = init_params(build_model(small_spec()), seed=4)
    assert serialize_model(a) == serialize_model(b)
    assert serialize_model(a) != serialize_model(c)

    for name, p in a.params.items():
        if name.endswith(".b"):
            assert np.all(p.data == 0.0), name
        else:
            fan_in, fan_out = a._init_meta[name]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(p.data).max() <= bound, name
            if p.data.size >= 20:
                assert p.data.min() < 0 < p.data.max(), name


def test_variants_share_encoder_draws_for_a_seed():
    gac = init_params(build_model(small_spec()), seed=5)
    plain = init_params(build_model(small_spec(variant="plain-unet")), seed=5)
    for name in gac.params:
        if name.startswith("enc"):
            np.testing.assert_array_equal(gac.params[name].data, plain.params[name].data)

    rng = np.random.RandomState(6)
    x = Tensor(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32))
    gac_maps = gac.encoder_features(x)
    plain_maps = plain.encoder_features(x)
    assert len(gac_maps) == 2
    for gm, pm in zip(gac_maps, plain_maps):
        np.testing.assert_array_equal(gm, pm)


# ---- forward pass ------------------------------------------------------------------


@pytest.mark.parametrize("variant,com", [("gac-unet", True), ("gac-unet", False),
                                         ("plain-unet", True)])
def test_forward_shape_and_range(variant, com):
    model = init_params(build_model(small_spec(variant=variant, com=com)), seed=0)
    rng = np.random.RandomState(1)
    x = Tensor(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32))
    out = model.forward(x)
    assert out.shape == (1, 16, 16)
    assert np.all(out.data > 0.0) and np.all(out.data < 1.0)


def test_forward_default_spec_produces_full_size_map():
    model = init_params(build_model(ModelSpec()), seed=0)
    rng = np.random.RandomState(2)
    prob = model.predict_proba(rng.uniform(0, 1, (256, 256, 3)).astype(np.float32))
    assert prob.shape == (256, 256)
    assert prob.min() >= 0.0 and prob.max() <= 1.0


def test_forward_multichannel_head():
    model = init_params(build_model(small_spec(out_channels=4)), seed=0)
    rng = np.random.RandomState(3)
    prob = model.predict_proba(rng.uniform(0, 1, (16, 16, 3)).astype(np.float32))
    assert prob.shape == (4, 16, 16)
    assert np.all((prob > 0) & (prob < 1))


def test_forward_shape_validation():
    model = build_model(small_spec())
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((3, 8, 8), dtype=np.float32)))
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((1, 16, 16), dtype=np.float32)))


def test_forward_is_deterministic():
    model = init_params(build_model(small_spec()), seed=7)
    rng = np.random.RandomState(4)
    x = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    one = model.forward(Tensor(x.copy())).data
    two = model.forward(Tensor(x.copy())).data
    np.testing.assert_array_equal(one, two)


# ---- serialization --------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    model = init_params(build_model(small_spec(seed=11)), seed=11)
    path = tmp_path / "model.gacm"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.spec == model.spec
    assert loaded.dtype == model.dtype
    for name in model.params:
        np.testing.assert_array_equal(loaded.params[name].data, model.params[name].data)


def test_file_size_is_header_plus_width_times_count(tmp_path):
    for dtype, width in ((np.float32, 4), (np.float64, 8)):
        model = init_params(build_model(small_spec(), dtype=dtype), seed=0)
        blob = serialize_model(model)
        config = model.spec.to_json().encode()
        header = len(MAGIC) + struct.calcsize("<HBBI") + len(config)
        assert len(blob) == header + width * model.parameter_count()


def test_float64_round_trip_preserves_width(tmp_path):
    model = init_params(build_model(small_spec(), dtype=np.float64), seed=1)
    path = tmp_path / "wide.gacm"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.dtype == np.float64
    np.testing.assert_array_equal(loaded.params["head.w"].data,
                                  model.params["head.w"].data)


def test_load_rejects_corrupt_files(tmp_path):
    model = init_params(build_model(small_spec()), seed=0)
    path = tmp_path / "model.gacm"
    save_model(model, path)
    blob = path.read_bytes()

    bad = tmp_path / "bad.gacm"
    bad.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ModelFormatError):
        load_model(bad)

    bad.write_bytes(blob[:-3])                       # truncated payload
    with pytest.raises(ModelFormatError):
        load_model(bad)

    bad.write_bytes(blob + b"\0")                    # trailing junk
    with pytest.raises(ModelFormatError):
        load_model(bad)

    wrong_version = blob[:4] + struct.pack("<H", FORMAT_VERSION + 1) + blob[6:]
    bad.write_bytes(wrong_version)
    with pytest.raises(ModelFormatError):
        load_model(bad)

    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "missing.gacm")


def test_checksum_tracks_parameter_changes():
    model = init_params(build_model(small_spec()), seed=0)
    before = model_checksum(model)
    assert before == model_checksum(model)
    model.params["head.b"].data[0] += 1.0
    assert model_checksum(model) != before
