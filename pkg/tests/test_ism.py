import itertools

import numpy as np
import pytest

from rgi.errors import InvalidConfig, MicOutsideRoom
from rgi.geometry import _rectangle, mic_positions, notch_cut, room_from_footprint, sample_room
from rgi.ism import (
    PathStats,
    SimConfig,
    dedupe_positions,
    enumerate_image_sources,
    first_order_visibility,
    fractional_delay_kernel,
    render_rir,
    simulate_sample,
    validate_path,
    validate_paths,
)

RECEIVER = mic_positions()[5]


def lattice(extents, max_order):
    """Mirror images of a source at the centre of a box: (kx Lx, ky Ly, kz Lz)."""
    out = []
    rng = range(-max_order, max_order + 1)
    for k in itertools.product(rng, rng, rng):
        if sum(abs(v) for v in k) <= max_order:
            out.append(np.multiply(k, extents))
    return np.array(out)


def _sorted_rows(a):
    a = np.round(a, 6)
    return a[np.lexsort(a.T[::-1])]


@pytest.fixture
def l_room():
    outline = notch_cut(_rectangle(8.0, 8.0), 2, 0.45, 0.45)
    return room_from_footprint(outline, 3.0, "l_shaped")


def test_enumeration_counts(box_room):
    assert len(enumerate_image_sources(box_room, 1)) == 7
    images = enumerate_image_sources(box_room, 2)
    assert int((images.orders == 2).sum()) == 30


def test_enumeration_never_repeats_a_wall(box_room):
    images = enumerate_image_sources(box_room, 3)
    for img in images:
        assert len(img.wall_sequence) == img.order
        assert all(a != b for a, b in zip(img.wall_sequence, img.wall_sequence[1:]))
    direct = images[0]
    assert direct.order == 0 and direct.gain == 1.0
    np.testing.assert_array_equal(direct.position, np.zeros(3))


def test_gains_multiply_reflection_coefficients():
    room = sample_room("pentagonal", 4)
    images = enumerate_image_sources(room, 2)
    for img in images[:40]:
        assert img.gain == pytest.approx(np.prod(room.reflection_coeffs[list(img.wall_sequence)]))


@pytest.mark.parametrize("order,expected", [(2, 1 + 6 + 18), (3, 1 + 6 + 18 + 38)])
def test_box_images_match_mirror_lattice(box_room, order, expected):
    images = enumerate_image_sources(box_room, order)
    valid = images.subset(validate_paths(box_room, images, RECEIVER))
    kept = valid.positions[dedupe_positions(valid.positions)]
    oracle = lattice((6.0, 4.0, 3.0), order)
    assert len(kept) == len(oracle) == expected
    np.testing.assert_allclose(_sorted_rows(kept), _sorted_rows(oracle), atol=1e-9)


def test_sampled_shoeboxes_match_mirror_lattice_to_order_six():
    for seed in range(50):
        room = sample_room("shoebox", seed)
        images = enumerate_image_sources(room, 6)
        valid = images.subset(validate_paths(room, images, RECEIVER))
        kept = valid.positions[dedupe_positions(valid.positions)]
        oracle = lattice(room.bbox, 6)
        assert len(kept) == len(oracle) == 377, f"seed {seed}"
        np.testing.assert_allclose(_sorted_rows(kept), _sorted_rows(oracle), atol=1e-6)


def test_exact_order_two_count(box_room):
    images = enumerate_image_sources(box_room, 2)
    valid = images.subset(validate_paths(box_room, images, RECEIVER) & (images.orders == 2))
    assert len(dedupe_positions(valid.positions)) == 18


def test_scalar_and_batch_validation_agree(l_room):
    images = enumerate_image_sources(l_room, 2)
    batch = validate_paths(l_room, images, RECEIVER)
    scalar = np.array([validate_path(l_room, img, RECEIVER) for img in images])
    np.testing.assert_array_equal(batch, scalar)


def test_direct_path_always_valid(l_room):
    images = enumerate_image_sources(l_room, 0)
    for mic in mic_positions():
        assert validate_path(l_room, images[0], mic)


def test_box_first_order_visible_from_every_mic(box_room):
    images = enumerate_image_sources(box_room, 1)
    for mic in mic_positions():
        assert validate_paths(box_room, images, mic).all()


def test_inner_corner_walls_hidden_in_l_room(l_room):
    visible = first_order_visibility(l_room)
    # sides 4 and 5 bound the removed corner
    np.testing.assert_array_equal(visible, [True, True, True, True, False, False, True, True])


def test_sampled_l_rooms_hide_a_first_order_wall():
    hidden = sum(not first_order_visibility(sample_room("l_shaped", seed)).all() for seed in range(200))
    assert hidden >= 190


@pytest.mark.parametrize("family", ["shoebox", "pentagonal", "hexagonal"])
def test_convex_rooms_show_every_wall(family):
    for seed in range(70):
        room = sample_room(family, seed)
        assert first_order_visibility(room).all(), f"{family} seed {seed}"


def test_sampled_l_rooms_reject_occluded_paths():
    stats = PathStats()
    for seed in range(10):
        room = sample_room("l_shaped", seed)
        validate_paths(room, enumerate_image_sources(room, 4), np.zeros(3), stats=stats)
    assert stats.rejected_by_occlusion > 0
    assert stats.accepted > 0


def test_segment_through_removed_corner_is_occluded(l_room):
    source = np.array([3.0, -1.0, 0.0])
    receiver = np.array([-1.0, 3.0, 0.0])
    images = enumerate_image_sources(l_room, 0, source=source)
    stats = PathStats()
    assert not validate_paths(l_room, images, receiver, source=source, stats=stats)[0]
    assert stats.rejected_by_occlusion == 1


@pytest.mark.parametrize("family", ["shoebox", "pentagonal", "hexagonal"])
def test_convex_rooms_never_occlude(family):
    for seed in range(3):
        room = sample_room(family, seed)
        stats = PathStats()
        validate_paths(room, enumerate_image_sources(room, 3), RECEIVER, stats=stats)
        assert stats.rejected_by_occlusion == 0
        assert stats.accepted > 0


def test_kernel_integer_delay_is_unit_impulse():
    first, taps = fractional_delay_kernel(10.0, 40)
    assert first == -30 and len(taps) == 81
    assert taps[40] == pytest.approx(1.0)
    assert np.abs(np.delete(taps, 40)).max() < 1e-12


def test_kernel_half_sample_delay_is_symmetric():
    first, taps = fractional_delay_kernel(10.5, 40)
    assert taps[0] == 0.0
    np.testing.assert_allclose(taps[1:], taps[1:][::-1], atol=1e-15)
    assert taps.sum() == pytest.approx(1.0, abs=2e-2)


def test_kernel_passband_energy():
    first, taps = fractional_delay_kernel(10.3, 40)
    n = first + np.arange(len(taps))
    freqs = np.linspace(0.0, 0.45, 400)
    response = np.exp(-2j * np.pi * freqs[:, None] * n[None, :]) @ taps
    assert np.mean(np.abs(response) ** 2) == pytest.approx(1.0, abs=5e-3)


def test_kernel_rejects_negative_delay():
    with pytest.raises(InvalidConfig):
        fractional_delay_kernel(-1.0, 40)


def test_direct_path_peaks_first(box_room, fast_sim):
    rir = simulate_sample(box_room, fast_sim).rir
    assert set(np.abs(rir).argmax(axis=1)) <= {0, 1, 2}


def test_single_image_arrives_on_time(box_room):
    cfg = SimConfig(max_order=1)
    mic = np.array([[0.042, 0.0, 0.0]])
    images = enumerate_image_sources(box_room, 1)
    for k in range(1, len(images)):
        one = images.subset([k])
        rir = render_rir(box_room, one, mic, cfg)[0]
        r = np.linalg.norm(one.positions[0] - mic[0])
        assert abs(int(np.abs(rir).argmax()) - r * cfg.fs / cfg.c) <= 1.0


def test_higher_order_images_arrive_on_time(l_room):
    cfg = SimConfig(max_order=3)
    mic = RECEIVER[None]
    images = enumerate_image_sources(l_room, 3)
    valid = images.subset(validate_paths(l_room, images, RECEIVER))
    valid = valid.subset(dedupe_positions(valid.positions))
    assert int((valid.orders == 3).sum()) > 0
    for k in range(1, len(valid)):
        rir = render_rir(l_room, valid.subset([k]), mic, cfg)[0]
        r = np.linalg.norm(valid.positions[k] - RECEIVER)
        assert abs(int(np.abs(rir).argmax()) - r * cfg.fs / cfg.c) <= 1.0


def test_nearest_reflection_arrival(box_room):
    cfg = SimConfig(max_order=1)
    mic = np.array([[0.042, 0.0, 0.0]])
    images = enumerate_image_sources(box_room, 1)
    rir = render_rir(box_room, images.subset(np.arange(1, 7)), mic, cfg)[0]
    first = np.flatnonzero(np.abs(rir) > 0.5 * np.abs(rir).max())[0]
    assert abs(first - 2 * 1.5 / cfg.c * cfg.fs) <= 1.0


def test_rendering_is_linear_in_gain(box_room):
    cfg = SimConfig(max_order=1)
    mic = mic_positions()[:2]
    images = enumerate_image_sources(box_room, 1).subset([3])
    doubled = images.subset([0])
    doubled.gains = doubled.gains * 2.0
    np.testing.assert_allclose(render_rir(box_room, doubled, mic, cfg), 2.0 * render_rir(box_room, images, mic, cfg), rtol=1e-6)


def test_energy_drops_with_reflection_coefficients(box_room):
    loud = simulate_sample(box_room, SimConfig(max_order=2, reflection_coeffs=(0.9,) * 6)).rir
    quiet = simulate_sample(box_room, SimConfig(max_order=2, reflection_coeffs=(0.7,) * 6)).rir
    e_loud, e_quiet = float((loud.astype(np.float64) ** 2).sum()), float((quiet.astype(np.float64) ** 2).sum())
    assert np.isfinite(e_loud) and e_quiet < e_loud


def test_mic_outside_room_rejected(box_room, fast_sim):
    images = enumerate_image_sources(box_room, 1)
    with pytest.raises(MicOutsideRoom):
        render_rir(box_room, images, np.array([[10.0, 0.0, 0.0]]), fast_sim)


def test_simulate_sample_shapes_and_determinism(fast_sim):
    room = sample_room("shoebox", 11)
    a, b = simulate_sample(room, fast_sim), simulate_sample(room, fast_sim)
    assert a.rir.shape == (32, 1024) and a.rir.dtype == np.float32
    assert a.A.shape == (8, 4) and a.p.shape == (8,)
    np.testing.assert_array_equal(a.p, [1, 1, 1, 1, 1, 1, 0, 0])
    np.testing.assert_array_equal(a.rir, b.rir)
    assert a.family == "shoebox"
    assert a.stats.accepted > 0


def test_sim_config_validation():
    with pytest.raises(InvalidConfig):
        SimConfig(max_order=-1)
    with pytest.raises(InvalidConfig):
        SimConfig(reflection_range=(0.0, 0.5))
    assert SimConfig.from_dict(SimConfig().to_dict()) == SimConfig()
