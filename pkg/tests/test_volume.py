"""
Test voxel grids, SPVOL files and phantom generation
"""
import numpy as np
import pydantic
import pytest

from src.core.exceptions import (
    DimensionMismatchError,
    DomainError,
    MalformedHeaderError,
    PayloadMismatchError,
    UnsupportedVersionError,
    ValidationError,
)
from src.volume.grid import LabelGrid, VoxelGrid, linear_index, nearest_voxel, normalized_coord, unravel, voxel_centers
from src.volume.io import load_volume, read_spvol, save_png, save_volume, write_spvol
from src.volume.phantom import (
    DatasetSplit,
    Primitive,
    PhantomSpec,
    default_phantom_spec,
    dump_phantom_spec,
    generate_phantom,
    make_population,
    parse_phantom_spec,
    perturbed_family,
    primitive_mask,
    subject_counts,
)


def test_linear_index_is_x_fastest():
    dims = (3, 4, 5)
    assert linear_index((0, 0, 0), dims) == 0
    assert linear_index((1, 0, 0), dims) == 1
    assert linear_index((0, 1, 0), dims) == 3
    assert linear_index((0, 0, 1), dims) == 12
    assert linear_index((2, 3, 4), dims) == 59


def test_unravel_inverts_linear_index():
    dims = (3, 4, 5)
    for flat in (0, 7, 31, 59):
        assert linear_index(unravel(flat, dims), dims) == flat


def test_index_out_of_bounds():
    with pytest.raises(DomainError):
        linear_index((3, 0, 0), (3, 4, 5))
    with pytest.raises(DomainError):
        unravel(60, (3, 4, 5))


def test_normalized_coord_is_voxel_center():
    np.testing.assert_allclose(normalized_coord((0, 0, 0), (2, 4, 8)), [0.25, 0.125, 0.0625])
    np.testing.assert_allclose(normalized_coord((1, 3, 7), (2, 4, 8)), [0.75, 0.875, 0.9375])


def test_nearest_voxel_clamps_upper_face():
    assert nearest_voxel((1.0, 0.0, 0.5), (4, 4, 4)) == (3, 0, 2)


def test_every_voxel_of_a_small_grid_round_trips():
    dims = (4, 4, 4)
    for flat in range(64):
        index = unravel(flat, dims)
        assert linear_index(index, dims) == flat
        assert nearest_voxel(normalized_coord(index, dims), dims) == index


def test_voxel_centers_follow_flat_order():
    dims = (2, 3, 2)
    centers = voxel_centers(dims)
    assert centers.shape == (12, 3)
    np.testing.assert_allclose(centers[linear_index((1, 2, 1), dims)], normalized_coord((1, 2, 1), dims))


def test_voxel_grid_rejects_out_of_range_values():
    with pytest.raises(ValidationError):
        VoxelGrid(np.full((2, 2, 2), 1.5))
    with pytest.raises(ValidationError):
        VoxelGrid(np.full((2, 2, 2), np.nan))
    with pytest.raises(ValidationError):
        VoxelGrid(np.zeros((1, 2, 2)))


def test_label_grid_checks_class_count():
    with pytest.raises(ValidationError):
        LabelGrid(np.full((2, 2, 2), 3), class_count=2)
    grid = LabelGrid(np.full((2, 2, 2), 2), class_count=2)
    assert grid.labels.dtype == np.uint16
    assert grid.mask(2).all()


def test_spvol_header_layout(tmp_path):
    path = tmp_path / "v.spvol"
    write_spvol(path, np.zeros((2, 3, 4), dtype=np.float32), (1.0, 0.5, 2.0), "f32")
    raw = path.read_bytes()
    header = b"SPVOL 1\ndims 2 3 4\nspacing 1.0 0.5 2.0\ndtype f32\n\n"
    assert raw.startswith(header)
    assert len(raw) == len(header) + 2 * 3 * 4 * 4


def test_spvol_preserves_x_fastest_order(tmp_path):
    values = np.zeros((2, 2, 2), dtype=np.float32)
    values[1, 0, 0] = 0.5
    path = tmp_path / "v.spvol"
    save_volume(path, VoxelGrid(values))
    payload = np.frombuffer(path.read_bytes()[-32:], dtype="<f4")
    assert payload[1] == np.float32(0.5)
    loaded = load_volume(path)
    assert isinstance(loaded, VoxelGrid)
    np.testing.assert_array_equal(loaded.values, values)


@pytest.mark.parametrize("dims", [(1, 1, 1), (3, 5, 2), (17, 9, 4), (64, 64, 64)])
def test_spvol_random_arrays_round_trip(tmp_path, dims):
    rng = np.random.default_rng(sum(dims))
    spacing = tuple(float(s) for s in rng.uniform(0.1, 3.0, 3))
    values = rng.uniform(0.0, 1.0, dims).astype(np.float32)
    labels = rng.integers(0, 65536, dims).astype(np.uint16)
    for array, tag in ((values, "f32"), (labels, "u16")):
        path = tmp_path / f"{tag}.spvol"
        write_spvol(path, array, spacing, tag)
        loaded, loaded_spacing, loaded_tag = read_spvol(path)
        assert loaded_tag == tag
        assert loaded_spacing == spacing
        assert loaded.dtype == array.dtype
        np.testing.assert_array_equal(loaded, array)


def test_spvol_labels_load_as_label_grid(tmp_path):
    labels = np.zeros((3, 3, 3), dtype=np.uint16)
    labels[1, 1, 1] = 2
    path = tmp_path / "l.spvol"
    save_volume(path, LabelGrid(labels, 2, (0.5, 0.5, 0.5)))
    loaded = load_volume(path)
    assert isinstance(loaded, LabelGrid)
    assert loaded.spacing == (0.5, 0.5, 0.5)
    np.testing.assert_array_equal(loaded.labels, labels)


def test_spvol_two_dimensional_arrays_get_unit_depth(tmp_path):
    path = tmp_path / "p.spvol"
    write_spvol(path, np.ones((4, 5)), (1.0, 1.0, 1.0), "f32")
    array, _, tag = read_spvol(path)
    assert array.shape == (4, 5, 1)
    assert tag == "f32"


@pytest.mark.parametrize(
    "header, error",
    [
        (b"SPVIL 1\ndims 1 1 1\nspacing 1 1 1\ndtype f32\n\n", MalformedHeaderError),
        (b"SPVOL 2\ndims 1 1 1\nspacing 1 1 1\ndtype f32\n\n", UnsupportedVersionError),
        (b"SPVOL 1\ndims 1 1\nspacing 1 1 1\ndtype f32\n\n", MalformedHeaderError),
        (b"SPVOL 1\ndims 1 1 1\nspacing 1 1 1\ndtype f64\n\n", MalformedHeaderError),
    ],
)
def test_spvol_bad_headers(tmp_path, header, error):
    path = tmp_path / "bad.spvol"
    path.write_bytes(header + b"\x00" * 4)
    with pytest.raises(error):
        read_spvol(path)


def test_spvol_payload_mismatches(tmp_path):
    header = b"SPVOL 1\ndims 2 2 2\nspacing 1 1 1\ndtype f32\n\n"
    path = tmp_path / "short.spvol"
    path.write_bytes(header + b"\x00" * 28)
    with pytest.raises(DimensionMismatchError):
        read_spvol(path)
    path.write_bytes(header + b"\x00" * 30)
    with pytest.raises(PayloadMismatchError):
        read_spvol(path)


def test_png_preview_is_eight_bit(tmp_path):
    from PIL import Image

    path = tmp_path / "slice.png"
    save_png(path, np.linspace(0.0, 2.0, 12).reshape(3, 4))
    image = np.asarray(Image.open(path))
    assert image.dtype == np.uint8
    assert image.shape == (4, 3)
    assert image.min() == 0 and image.max() == 255


def test_primitive_masks():
    points = np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.89], [0.85, 0.85, 0.85]])
    ball = Primitive(shape="ellipsoid", center=(0.5, 0.5, 0.5), radii=(0.4, 0.4, 0.4), intensity=1.0, label=1)
    shell = ball.model_copy(update={"shape": "spherical-shell", "thickness": 0.05})
    box = ball.model_copy(update={"shape": "box"})
    assert primitive_mask(ball, points).tolist() == [True, True, False]
    assert primitive_mask(shell, points).tolist() == [False, True, False]
    assert primitive_mask(box, points).tolist() == [True, True, True]


def test_phantom_is_deterministic():
    spec = default_phantom_spec()
    a, la = generate_phantom(spec, 5, (12, 12, 12))
    b, lb = generate_phantom(spec, 5, (12, 12, 12))
    c, _ = generate_phantom(spec, 6, (12, 12, 12))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(la.labels, lb.labels)
    assert not np.array_equal(a.values, c.values)


def test_later_primitives_overwrite_earlier_ones():
    spec = PhantomSpec(
        class_count=2,
        primitives=(
            Primitive(shape="box", center=(0.5, 0.5, 0.5), radii=(0.5, 0.5, 0.5), intensity=0.2, label=1),
            Primitive(shape="box", center=(0.5, 0.5, 0.5), radii=(0.2, 0.2, 0.2), intensity=0.8, label=2),
        ),
    )
    grid, labels = generate_phantom(spec, 0, (10, 10, 10))
    assert labels.labels[5, 5, 5] == 2
    assert grid.values[5, 5, 5] == pytest.approx(0.8)
    assert labels.labels[0, 0, 0] == 1
    assert set(np.unique(labels.labels)) == {1, 2}


def test_phantom_spec_check_names_offending_primitive():
    spec = PhantomSpec(
        class_count=1,
        primitives=(Primitive(shape="box", center=(0.5, 0.5, 0.5), radii=(0.1, 0.1, 0.1), intensity=0.5, label=2),),
    )
    with pytest.raises(ValidationError, match="primitive 0"):
        spec.check()


def test_phantom_spec_text_survives_dump():
    spec = default_phantom_spec()
    assert parse_phantom_spec(dump_phantom_spec(spec)).model_dump() == spec.model_dump()


def test_perturbed_family_moves_primitives():
    spec = default_phantom_spec()
    moved = perturbed_family(spec, 0.1, seed=3)
    assert moved.class_count == spec.class_count
    assert moved.primitives[0].center != spec.primitives[0].center
    moved.check()


def test_population_split_is_disjoint_and_seeded():
    spec = default_phantom_spec()
    subjects, split = make_population(spec, (3, 1, 1), (8, 8, 8), master_seed=4)
    _, again = make_population(spec, (3, 1, 1), (8, 8, 8), master_seed=4)
    assert len(subjects) == 5
    assert split == again
    assert sorted(split.all_ids) == sorted(s[0] for s in subjects)
    assert len(split.train) == 3 and len(split.val) == 1 and len(split.test) == 1


def test_subject_counts_follow_desk_ratio():
    assert subject_counts(30) == (20, 5, 5)
    assert sum(subject_counts(7)) == 7


def test_split_must_be_disjoint():
    with pytest.raises(pydantic.ValidationError):
        DatasetSplit(train=["a"], val=["a"], test=[], master_seed=0)
