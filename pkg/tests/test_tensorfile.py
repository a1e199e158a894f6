import numpy as np
import pytest

from wxprompt.errors import DataError, UsageError
from wxprompt.tensorfile import crc32c, read_tensor_file, write_tensor_file


def test_crc32c_known_vector():
    # Classic CRC-32C check value for the ASCII digits.
    assert crc32c(b"123456789") == 0xE3069283
    assert crc32c(b"") == 0


def test_crc32c_chaining_matches_whole():
    rng = np.random.default_rng(0)
    data = rng.integers(0, 256, size=1000, dtype=np.uint8).tobytes()
    assert crc32c(data) == crc32c(data[300:], crc32c(data[:300]))


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(42)
    tensors = {
        "weights": rng.standard_normal((3, 4, 5)).astype(np.float32),
        "bias": rng.standard_normal(7),
        "flags": rng.integers(0, 255, size=(2, 2), dtype=np.uint8).astype(np.uint8),
        "steps": np.array([1, -9, 2**40], dtype=np.int64),
        "scalar": np.float64(3.25),
    }
    path = tmp_path / "t.wxt"
    write_tensor_file(path, tensors)
    loaded = read_tensor_file(path)
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        got = loaded[name]
        assert got.dtype == np.asarray(arr).dtype
        assert got.shape == np.asarray(arr).shape
        assert np.asarray(arr).tobytes() == got.tobytes()


def test_empty_tensor_set_is_valid(tmp_path):
    path = tmp_path / "empty.wxt"
    write_tensor_file(path, {})
    assert read_tensor_file(path) == {}


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.wxt"
    write_tensor_file(path, {"a": np.arange(100, dtype=np.float64)})
    blob = path.read_bytes()
    for cut in (4, len(blob) // 2, len(blob) - 1):
        (tmp_path / "cut.wxt").write_bytes(blob[:cut])
        with pytest.raises(DataError):
            read_tensor_file(tmp_path / "cut.wxt")


def test_corrupted_payload_rejected(tmp_path):
    path = tmp_path / "t.wxt"
    write_tensor_file(path, {"a": np.arange(64, dtype=np.float32)})
    blob = bytearray(path.read_bytes())
    blob[-40] ^= 0x01  # flip one payload bit
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="checksum"):
        read_tensor_file(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "t.wxt"
    write_tensor_file(path, {"a": np.zeros(3, dtype=np.float32)})
    blob = bytearray(path.read_bytes())

    wrong_magic = bytearray(blob)
    wrong_magic[0] = ord("X")
    path.write_bytes(bytes(wrong_magic))
    with pytest.raises(DataError, match="magic"):
        read_tensor_file(path)

    wrong_version = bytearray(blob)
    wrong_version[8] = 99
    path.write_bytes(bytes(wrong_version))
    with pytest.raises(DataError, match="version"):
        read_tensor_file(path)


def test_duplicate_names_rejected(tmp_path):
    class Sneaky(dict):
        def keys(self):
            return ["a", "a"]

    with pytest.raises(UsageError):
        write_tensor_file(tmp_path / "x.wxt", Sneaky())


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(UsageError):
        write_tensor_file(tmp_path / "x.wxt", {"a": np.zeros(2, dtype=np.complex128)})


def test_many_random_files_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    for i in range(50):
        tensors = {}
        for j in range(rng.integers(1, 4)):
            shape = tuple(rng.integers(1, 5, size=rng.integers(0, 3)))
            tensors[f"t{j}"] = rng.standard_normal(shape).astype(
                np.float32 if rng.integers(2) else np.float64
            )
        path = tmp_path / f"f{i}.wxt"
        write_tensor_file(path, tensors)
        loaded = read_tensor_file(path)
        for name, arr in tensors.items():
            assert loaded[name].tobytes() == arr.tobytes()
            assert loaded[name].shape == arr.shape
