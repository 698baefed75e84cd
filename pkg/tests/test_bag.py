import os
import tempfile
import unittest

from src.interfaces import builtin
from src.interfaces.serialization import deserialize, serialize
from src.shared.errors import BagFormatError, ValidationError
from src.tooling.bag import (
    BAG_MAGIC, BagRecord, BagWriter, bag_duration, bag_info, encode_record, format_wall_ns,
    parse_bag, play_bag, read_bag, record_bag, type_name_for,
)
from tests.support import SimDomain


def record(mono, topic="/chatter", payload=b"\x01\x02", type_hash=None):
    return BagRecord(mono, 1_700_000_000_000_000_000 + mono, topic,
                     builtin.STRING.type_hash if type_hash is None else type_hash, payload)


class TestBagFormat(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.mbag")

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_then_read(self):
        records = [record(0), record(5_000_000, "/scan", b""), record(5_000_000, payload=b"x" * 300)]
        with BagWriter(self.path) as writer:
            for r in records:
                writer.write(r)
        self.assertEqual(writer.count, 3)
        self.assertEqual(read_bag(self.path), records)
        with open(self.path, "rb") as f:
            self.assertEqual(f.read(4), BAG_MAGIC)

    def test_stamps_must_not_go_backwards(self):
        with BagWriter(self.path) as writer:
            writer.write(record(10))
            with self.assertRaises(ValidationError):
                writer.write(record(9))

    def test_empty_bag(self):
        BagWriter(self.path).close()
        self.assertEqual(read_bag(self.path), [])

    def test_corruption_reports_offset(self):
        image = b"MBAG\x01\x00" + encode_record(record(0, payload=b"abcdef"))
        with self.assertRaises(BagFormatError) as ctx:
            list(parse_bag(b"XBAG\x01\x00"))
        self.assertEqual(ctx.exception.offset, 0)
        with self.assertRaises(BagFormatError) as ctx:
            list(parse_bag(b"MBAG\x02\x00"))
        self.assertEqual(ctx.exception.offset, 4)
        with self.assertRaises(BagFormatError) as ctx:
            list(parse_bag(image[:-2]))
        self.assertIn("payload", str(ctx.exception))
        with self.assertRaises(BagFormatError):
            list(parse_bag(b"MBAG\x01\x00" + encode_record(record(0, topic=""))))

    def test_type_names(self):
        self.assertEqual(type_name_for(builtin.STRING.type_hash), "std/String")
        self.assertEqual(type_name_for(0x1234), "bag/0000000000001234")

    def test_info_and_duration(self):
        records = [record(0), record(500_000_000, payload=b"abc"), record(2_000_000_000, "/scan", b"z")]
        info = bag_info(records)
        self.assertEqual(list(info["topic"]), ["/chatter", "/scan"])
        self.assertEqual(list(info["count"]), [2, 1])
        self.assertEqual(list(info["bytes"]), [5, 1])
        self.assertEqual(bag_duration(records), 2.0)
        self.assertEqual(bag_duration(records[:1]), 0.0)
        self.assertTrue(bag_info([]).empty)

    def test_wall_stamp_format(self):
        self.assertEqual(format_wall_ns(0), "1970-01-01T00:00:00.000000Z")
        self.assertEqual(format_wall_ns(1_500_000_000), "1970-01-01T00:00:01.500000Z")


class TestRecordAndPlay(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "chatter.mbag")

    def tearDown(self):
        self.domain.close()
        self.tmp.cleanup()

    def test_record_then_replay(self):
        talker = self.domain.context().create_node("talker")
        publisher = talker.create_publisher("/chatter", builtin.INT64)
        sent = []

        def tick():
            sent.append(len(sent))
            publisher.publish({"data": sent[-1]})

        timer = talker.create_timer(0.1, tick)
        recorder = self.domain.context().create_node("recorder")
        counts = record_bag(recorder, self.domain.executor, ["chat*"], self.path, duration=3.0)
        timer.cancel()

        records = read_bag(self.path)
        self.assertEqual(counts, {"/chatter": len(records)})
        self.assertGreaterEqual(len(records), 15)
        values = [deserialize(r.payload, builtin.INT64).data for r in records]
        # whatever was recorded is a gap-free tail of what was sent
        self.assertEqual(values, list(range(values[0], values[0] + len(values))))
        self.assertTrue(all(r.type_hash == builtin.INT64.type_hash for r in records))
        stamps = [r.recv_mono_ns for r in records]
        self.assertEqual(stamps, sorted(stamps))
        self.assertAlmostEqual(bag_duration(records), 0.1 * (len(records) - 1), delta=0.05)

        heard = []
        listener = self.domain.context().create_node("listener")
        listener.create_subscription("/chatter", builtin.INT64, lambda msg: heard.append(msg.data))
        player = self.domain.context().create_node("player")
        played = play_bag(player, self.domain.executor, records, rate=2.0)
        self.assertEqual(played, len(records))
        self.domain.spin_until(lambda: len(heard) == len(records), 2.0)
        self.assertEqual(heard, values)

    def test_playback_keeps_scaled_gaps(self):
        listener = self.domain.context().create_node("listener")
        arrivals = []
        listener.create_subscription("/chatter", builtin.STRING,
                                     lambda msg: arrivals.append(self.domain.clock.now()))
        player = self.domain.context().create_node("player")
        payload = serialize(builtin.STRING.new(data="hi"))
        records = [record(i * 400_000_000, payload=payload) for i in range(4)]
        play_bag(player, self.domain.executor, records, rate=2.0)
        self.domain.spin_until(lambda: len(arrivals) == 4, 1.0)
        gaps = [b - a for a, b in zip(arrivals, arrivals[1:])]
        for gap in gaps:
            self.assertAlmostEqual(gap, 0.2, delta=0.03)

    def test_bad_rate(self):
        player = self.domain.context().create_node("player")
        with self.assertRaises(ValidationError):
            play_bag(player, self.domain.executor, [record(0)], rate=0)
        self.assertEqual(play_bag(player, self.domain.executor, []), 0)


if __name__ == "__main__":
    unittest.main()
