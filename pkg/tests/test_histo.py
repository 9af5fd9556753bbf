import numpy as np
import pytest

from gliopipe.histo import (cellularity_fraction, extract_tiles, qc_tile,
                            quota_for, tile_grid)
from gliopipe.manifest import (balance_records, class_counts, read_manifest,
                               write_manifest)


def tissue_tile(h=20, w=20):
    """Stained-looking tile: dark with clear channel spread."""
    tile = np.zeros((h, w, 3), dtype=np.uint8)
    tile[..., 0] = 150
    tile[..., 1] = 60
    tile[..., 2] = 160
    return tile


def white_tile(h=20, w=20):
    return np.full((h, w, 3), 255, dtype=np.uint8)


class TestTileGrid:
    def test_exact_tiling(self):
        assert len(tile_grid(4000, 4000, 2000)) == 4

    def test_borders_dropped(self):
        tiles = tile_grid(4100, 4100, 2000)
        assert len(tiles) == 4
        assert all(x + 2000 <= 4100 and y + 2000 <= 4100 for _, _, x, y in tiles)

    def test_too_small_image(self):
        assert tile_grid(1999, 5000, 2000) == []

    def test_positions_non_overlapping(self):
        tiles = tile_grid(6000, 4000, 2000)
        assert len({(r, c) for r, c, _, _ in tiles}) == len(tiles) == 6
        assert [(r, c) for r, c, _, _ in tiles] == sorted((r, c) for r, c, _, _ in tiles)

    def test_bad_tile_size(self):
        with pytest.raises(ValueError):
            tile_grid(100, 100, 0)


class TestQc:
    def test_all_white_is_negative(self):
        verdict = qc_tile(white_tile())
        assert verdict.verdict == "negative_N"
        assert verdict.bright_pixel_fraction == 1.0

    def test_exactly_95_percent_bright_is_positive(self):
        tile = tissue_tile(20, 20)
        flat = tile.reshape(-1, 3)
        flat[:380] = 255  # 380 / 400 = exactly 95%
        verdict = qc_tile(tile, flag_dark_artifacts=False)
        assert verdict.bright_pixel_fraction == pytest.approx(0.95)
        assert verdict.verdict == "positive"

    def test_96_percent_bright_is_negative(self):
        tile = tissue_tile(20, 20)
        tile.reshape(-1, 3)[:384] = 255  # 96%
        assert qc_tile(tile).verdict == "negative_N"

    def test_one_pixel_over_threshold_flips_bright_status(self):
        tile = np.full((1, 1, 3), 204, dtype=np.uint8)
        assert qc_tile(tile, flag_dark_artifacts=False).bright_pixel_fraction == 0.0
        tile[:] = 205
        assert qc_tile(tile).bright_pixel_fraction == 1.0

    def test_bright_requires_all_three_channels(self):
        tile = np.full((2, 2, 3), 255, dtype=np.uint8)
        tile[..., 2] = 100  # one dark channel keeps the pixel non-bright
        assert qc_tile(tile, flag_dark_artifacts=False).bright_pixel_fraction == 0.0

    def test_dark_colorless_artifact_flagged(self):
        pen = np.full((8, 8, 3), 40, dtype=np.uint8)  # dark, zero channel spread
        assert qc_tile(pen).verdict == "negative_N"
        assert qc_tile(pen, flag_dark_artifacts=False).verdict == "positive"

    def test_hemorrhage_rule_off_by_default(self):
        blood = np.zeros((8, 8, 3), dtype=np.uint8)
        blood[..., 0] = 180
        blood[..., 1] = 40
        blood[..., 2] = 40
        assert qc_tile(blood).verdict == "positive"
        assert qc_tile(blood, flag_hemorrhage=True).verdict == "negative_N"

    def test_non_rgb_rejected(self):
        with pytest.raises(ValueError):
            qc_tile(np.zeros((4, 4), dtype=np.uint8))


class TestCellularity:
    def test_all_white(self):
        assert cellularity_fraction(white_tile()) == 0.0

    def test_all_dark(self):
        assert cellularity_fraction(tissue_tile()) == 1.0

    def test_half_bright(self):
        tile = tissue_tile(2, 2)
        tile[0] = 255
        assert cellularity_fraction(tile) == 0.5


class TestExtractTiles:
    def make_slide(self, grid=4, px=16):
        slide = np.zeros((grid * px, grid * px, 3), dtype=np.uint8)
        slide[:] = tissue_tile(grid * px, grid * px)
        slide[:, (grid // 2) * px :] = 255  # right half background
        return slide

    def test_left_tissue_right_background(self):
        slide = self.make_slide()
        records = extract_tiles(slide, "c1", "c1.png", "G", 0.25, quota=100,
                                tile_size=16)
        by_label = class_counts(records)
        assert by_label == {"G": 8, "N": 8}
        for rec in records:
            assert (rec.label == "G") == (rec.col < 2)

    def test_quota_zero_only_n(self):
        records = extract_tiles(self.make_slide(), "c1", "c1.png", "A", 0.25,
                                quota=0, tile_size=16)
        assert {r.label for r in records} == {"N"}

    def test_quota_subsample_deterministic(self):
        slide = self.make_slide()
        a = extract_tiles(slide, "c1", "c1.png", "O", 0.25, quota=3, seed=5, tile_size=16)
        b = extract_tiles(slide, "c1", "c1.png", "O", 0.25, quota=3, seed=5, tile_size=16)
        assert [(r.row, r.col) for r in a] == [(r.row, r.col) for r in b]
        assert class_counts(a)["O"] == 3

    def test_no_duplicate_grid_positions(self):
        records = extract_tiles(self.make_slide(), "c1", "c1.png", "G", 0.25,
                                quota=100, tile_size=16)
        positions = [(r.row, r.col) for r in records]
        assert len(positions) == len(set(positions))

    def test_positive_and_n_disjoint(self):
        records = extract_tiles(self.make_slide(), "c1", "c1.png", "G", 0.25,
                                quota=100, tile_size=16)
        seen = {}
        for r in records:
            assert (r.row, r.col) not in seen
            seen[(r.row, r.col)] = r.label

    def test_invalid_label(self):
        with pytest.raises(ValueError):
            extract_tiles(self.make_slide(), "c1", "c1.png", "N", 0.25, quota=1,
                          tile_size=16)


class TestQuotaTable:
    def test_res_025(self):
        assert quota_for(0.25, "O") == 10
        assert quota_for(0.25, "A") == 10
        assert quota_for(0.25, "G") == 31

    def test_res_050(self):
        assert quota_for(0.50, "O") == 5
        assert quota_for(0.50, "A") == 20
        assert quota_for(0.50, "G") == 50

    def test_unknown_resolution(self):
        with pytest.raises(KeyError):
            quota_for(0.1, "O")


class TestBalance:
    def make_records(self, counts):
        from gliopipe.manifest import TileRecord

        out = []
        for label, n in counts.items():
            for i in range(n):
                out.append(TileRecord(f"case{i % 7}", "s.png", i, 0, 0.25, label,
                                      f"{label}_{i}.png"))
        return out

    def test_equal_counts(self):
        records = self.make_records({"A": 100, "O": 100, "G": 100, "N": 100})
        balanced = balance_records(records, 50, seed=0)
        assert class_counts(balanced) == {"A": 50, "O": 50, "G": 50, "N": 50}

    def test_same_seed_same_selection(self):
        records = self.make_records({"A": 40, "O": 30})
        a = balance_records(records, 20, seed=3)
        b = balance_records(records, 20, seed=3)
        assert [r.tile_path for r in a] == [r.tile_path for r in b]

    def test_paper_counts_with_sufficient_supply(self):
        records = self.make_records({"A": 1000, "G": 1000, "O": 1000, "N": 1000})
        balanced = balance_records(
            records, {"A": 853, "G": 921, "O": 807, "N": 900}, seed=0)
        assert class_counts(balanced) == {"A": 853, "G": 921, "O": 807, "N": 900}

    def test_strict_mode_error_names_class(self):
        records = self.make_records({"A": 10, "O": 30})
        with pytest.raises(ValueError, match="'A'"):
            balance_records(records, 20, seed=0)

    def test_downsample_mode(self):
        records = self.make_records({"A": 10, "O": 30})
        balanced = balance_records(records, 20, seed=0, strict=False)
        assert class_counts(balanced) == {"A": 10, "O": 20}


class TestManifestRoundTrip:
    def test_write_read_write_byte_identical(self, tmp_path):
        records = extract_tiles(TestExtractTiles().make_slide(), "c1", "c1.png",
                                "G", 0.25, quota=100, tile_size=16)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_manifest(records, p1)
        write_manifest(read_manifest(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()
