"""
数据加载与合成数据单元测试
"""

import json
import tempfile
import unittest
from pathlib import Path

from src.config.schemas import DAY_SECONDS, AttributeMapping, DatasetSpec, SynthSpec, load_model
from src.core.ingest import (
    cutoff_from_days,
    cutoff_from_fraction,
    discretize_delay,
    load_records,
    resolve_cutoff,
    temporal_split,
)
from src.core.synthetic import generate_synthetic, generate_synthetic_frame
from src.core.tree import build_tree, validate_consistency
from src.models.data_models import MISSING_TOKEN, AttributionRecord
from src.models.errors import ConfigError, DataError, ParameterError

CONFIG_DIR = Path(__file__).resolve().parents[2] / "config"

FIXTURE = """partner_id,device_type,click_timestamp,Sale,time_delay_for_conversion
P1,mobile,1000,1,3600
P1,desktop,2000,0,-1
P2,mobile,3000,1,200000
P2,,4000,0,-1
P3,tablet,5000,1,0
"""


def fixture_spec(path: Path, **overrides) -> DatasetSpec:
    fields = dict(
        path=str(path),
        attributes=[
            AttributeMapping(name="partner_id"),
            AttributeMapping(name="device_type"),
            AttributeMapping(name="delay", column="time_delay_for_conversion", kind="unknown"),
        ],
        delay_column="time_delay_for_conversion",
    )
    fields.update(overrides)
    return DatasetSpec(**fields)


class TestDiscretizeDelay(unittest.TestCase):
    """转化延迟分桶"""

    def setUp(self):
        self.spec = fixture_spec(Path("unused.csv"))

    def test_zero(self):
        self.assertEqual(discretize_delay(0, self.spec), 0)

    def test_bucket_boundary(self):
        self.assertEqual(discretize_delay(2 * DAY_SECONDS - 1, self.spec), 0)
        self.assertEqual(discretize_delay(2 * DAY_SECONDS, self.spec), 1)

    def test_end_of_window(self):
        self.assertEqual(discretize_delay(30 * DAY_SECONDS, self.spec), 14)

    def test_negative_rejected(self):
        with self.assertRaises(ParameterError):
            discretize_delay(-1, self.spec)


class TestLoadRecords(unittest.TestCase):
    """CSV 加载"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "fixture.csv"
        self.path.write_text(FIXTURE, encoding="utf-8")

    def tearDown(self):
        self.tmp.cleanup()

    def test_fixture(self):
        records = load_records(fixture_spec(self.path))
        self.assertEqual(len(records), 5)
        self.assertEqual(sum(r.converted for r in records), 3)
        self.assertEqual(records[0].unknown_value, "0")
        self.assertEqual(records[2].unknown_value, "1")
        self.assertIsNone(records[1].unknown_value)
        self.assertEqual(records[3].known_values["device_type"], MISSING_TOKEN)
        self.assertEqual(records[4].timestamp, 5000)

    def test_fixture_tree(self):
        spec = fixture_spec(self.path)
        tree = build_tree(load_records(spec), spec.attribute_schema())
        self.assertTrue(validate_consistency(tree))
        self.assertEqual(int(tree.counts[tree.topology.root]), 3)
        self.assertEqual(int(tree.counts[tree.find(("P2", MISSING_TOKEN))]), 0)

    def test_negative_delay_is_malformed(self):
        text = FIXTURE + "P4,mobile,6000,1,-50\n"
        self.path.write_text(text, encoding="utf-8")
        with self.assertRaises(DataError) as ctx:
            load_records(fixture_spec(self.path, max_malformed_fraction=0.0))
        self.assertEqual(len(ctx.exception.samples), 1)
        self.assertIn("第 7 行", ctx.exception.samples[0])
        records = load_records(fixture_spec(self.path, max_malformed_fraction=0.5))
        self.assertEqual(len(records), 5)

    def test_missing_delay_on_converted_row(self):
        self.path.write_text(FIXTURE + "P4,mobile,6000,1,\n", encoding="utf-8")
        with self.assertRaises(DataError):
            load_records(fixture_spec(self.path, max_malformed_fraction=0.0))

    def test_bad_timestamp(self):
        self.path.write_text(FIXTURE + "P4,mobile,yesterday,0,-1\n", encoding="utf-8")
        records = load_records(fixture_spec(self.path, max_malformed_fraction=0.5))
        self.assertEqual(len(records), 5)

    def test_missing_column(self):
        spec = fixture_spec(self.path, attributes=[AttributeMapping(name="country")], delay_column=None)
        with self.assertRaises(ConfigError):
            load_records(spec)

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_records(fixture_spec(Path(self.tmp.name) / "absent.csv"))

    def test_conversion_timestamp_column(self):
        self.path.write_text(
            "campaign,timestamp,conversion_timestamp,attribution\n"
            "c1,100,-1,0\n"
            "c1,100,172900,1\n",
            encoding="utf-8",
        )
        spec = DatasetSpec(
            path=str(self.path),
            attributes=[AttributeMapping(name="campaign"), AttributeMapping(name="delay", kind="unknown")],
            timestamp_column="timestamp",
            conversion_column="attribution",
            conversion_timestamp_column="conversion_timestamp",
        )
        records = load_records(spec)
        self.assertEqual([r.unknown_value for r in records], [None, "1"])

    def test_headerless_file(self):
        body = "\n".join(FIXTURE.splitlines()[1:]) + "\n"
        self.path.write_text(body.replace(",", "\t"), encoding="utf-8")
        spec = fixture_spec(
            self.path, delimiter="\t",
            column_names=["partner_id", "device_type", "click_timestamp", "Sale", "time_delay_for_conversion"])
        self.assertEqual(len(load_records(spec)), 5)

    def test_headerless_malformed_line_number(self):
        """无表头文件的错误行号从第 1 行起算"""
        body = "\n".join(FIXTURE.splitlines()[1:]) + "\nP4,mobile,6000,1,-50\n"
        self.path.write_text(body, encoding="utf-8")
        spec = fixture_spec(
            self.path, max_malformed_fraction=0.0,
            column_names=["partner_id", "device_type", "click_timestamp", "Sale", "time_delay_for_conversion"])
        with self.assertRaises(DataError) as ctx:
            load_records(spec)
        self.assertIn("第 6 行", ctx.exception.samples[0])

    def test_known_only_schema(self):
        spec = fixture_spec(self.path, attributes=[AttributeMapping(name="partner_id")], delay_column=None)
        records = load_records(spec)
        tree = build_tree(records, spec.attribute_schema())
        self.assertEqual(tree.num_nodes, 4)
        self.assertEqual(int(tree.counts[tree.find(("P1",))]), 1)


class TestDatasetSpec(unittest.TestCase):
    """数据集描述与配置文件"""

    def test_csscl_playbook(self):
        spec = load_model(DatasetSpec, CONFIG_DIR / "csscl_dataset.json")
        schema = spec.attribute_schema()
        self.assertEqual(schema.depth, 5)
        self.assertEqual(len(schema.unknown_attribute.domain), 15)

    def test_csscl_six_day_playbook(self):
        spec = load_model(DatasetSpec, CONFIG_DIR / "csscl_dataset_6day.json")
        schema = spec.attribute_schema()
        self.assertEqual(schema.depth, 4)
        self.assertEqual(len(schema.unknown_attribute.domain), 5)

    def test_camb_playbook(self):
        spec = load_model(DatasetSpec, CONFIG_DIR / "camb_dataset.json")
        self.assertEqual(spec.attribute_schema().names, ["campaign", "cat1", "cat8", "conversion_delay"])

    def test_two_unknown_attributes_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text(json.dumps({
                "path": "x.csv",
                "delay_column": "d",
                "attributes": [{"name": "a", "kind": "unknown"}, {"name": "b", "kind": "unknown"}],
            }), encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_model(DatasetSpec, path)

    def test_buckets_must_cover_window(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "bad.json"
            path.write_text(json.dumps({
                "path": "x.csv",
                "delay_column": "d",
                "delay_bucket_count": 3,
                "attributes": [{"name": "a"}, {"name": "d", "kind": "unknown"}],
            }), encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_model(DatasetSpec, path)

    def test_missing_config_file(self):
        with self.assertRaises(ConfigError):
            load_model(DatasetSpec, "/nonexistent/dataset.json")


class TestTemporalSplit(unittest.TestCase):
    """按时间切分先验/评估集"""

    def setUp(self):
        self.records = [AttributionRecord({"g": "a"}, False, None, ts) for ts in (0, 10, 20, 30, 40)]

    def test_all_before_cutoff(self):
        prior, evaluation = temporal_split(self.records, 100)
        self.assertEqual(len(prior), 5)
        self.assertEqual(evaluation, [])

    def test_sizes_sum(self):
        prior, evaluation = temporal_split(self.records, 25)
        self.assertEqual(len(prior) + len(evaluation), 5)
        self.assertTrue(all(r.timestamp < 25 for r in prior))
        self.assertTrue(all(r.timestamp >= 25 for r in evaluation))

    def test_cutoff_helpers(self):
        self.assertEqual(cutoff_from_days(self.records, 1), DAY_SECONDS)
        self.assertEqual(cutoff_from_fraction(self.records, 0.5), 20)

    def test_resolve_requires_cutoff(self):
        spec = fixture_spec(Path("unused.csv"))
        with self.assertRaises(ConfigError):
            resolve_cutoff(self.records, spec)
        self.assertEqual(resolve_cutoff(self.records, fixture_spec(Path("unused.csv"), prior_fraction=0.25)), 10)


class TestSynthetic(unittest.TestCase):
    """合成数据生成"""

    def test_conversion_volume(self):
        """10 组 × 1000 次曝光、转化率 20%：转化行数在二项分布 4σ 以内"""
        frame = generate_synthetic_frame(SynthSpec(num_groups=10, impressions_per_group=1000, conversion_rate=0.2))
        self.assertEqual(len(frame), 10_000)
        self.assertLessEqual(abs(int(frame["Sale"].sum()) - 2000), 4 * 40)

    def test_same_seed_identical_file(self):
        spec = SynthSpec(num_groups=3, impressions_per_group=200, seed=5)
        with tempfile.TemporaryDirectory() as tmp:
            first, _ = generate_synthetic(spec, Path(tmp) / "a.csv")
            second, _ = generate_synthetic(spec, Path(tmp) / "b.csv")
            self.assertEqual(first.read_bytes(), second.read_bytes())
            other, _ = generate_synthetic(spec.model_copy(update={"seed": 6}), Path(tmp) / "c.csv")
            self.assertNotEqual(first.read_bytes(), other.read_bytes())

    def test_generated_tree_consistent(self):
        spec = SynthSpec(num_groups=4, impressions_per_group=300, include_age_group=True)
        with tempfile.TemporaryDirectory() as tmp:
            path, dataset = generate_synthetic(spec, Path(tmp) / "synthetic.csv")
            self.assertTrue(path.with_suffix(".spec.json").exists())
            reloaded = load_model(DatasetSpec, path.with_suffix(".spec.json"))
            self.assertEqual(reloaded, dataset)
            records = load_records(dataset)
        tree = build_tree(records, dataset.attribute_schema())
        self.assertEqual(tree.depth, 5)
        self.assertTrue(validate_consistency(tree))
        self.assertEqual(int(tree.counts[tree.topology.root]), sum(r.converted for r in records))


if __name__ == '__main__':
    unittest.main()
