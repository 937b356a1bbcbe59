#include <cstring>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <zlib.h>

#include "echoslice/codec.hpp"
#include "echoslice/error.hpp"
#include "support.hpp"

namespace echoslice {
namespace {

using testing::Rng;

std::uint32_t le32(const std::vector<std::uint8_t>& b, std::size_t pos) {
  return b[pos] | (b[pos + 1] << 8) | (b[pos + 2] << 16) | (static_cast<std::uint32_t>(b[pos + 3]) << 24);
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

// Builds a stream by hand with zlib directly, at a compression level the
// library never uses, so decode cannot lean on matching encoder output.
RawStream oracle_stream(const std::vector<std::vector<std::uint8_t>>& frames, bool with_crc) {
  std::vector<std::vector<std::uint8_t>> packed;
  for (const auto& f : frames) {
    uLongf len = compressBound(static_cast<uLong>(f.size()));
    std::vector<std::uint8_t> out(len);
    EXPECT_EQ(compress2(out.data(), &len, f.data(), static_cast<uLong>(f.size()), 9), Z_OK);
    out.resize(len);
    packed.push_back(out);
  }
  const std::size_t header = 8 + 4 * frames.size();
  std::size_t total = header;
  for (const auto& p : packed) total += 32 + p.size();

  std::vector<std::uint8_t> bytes;
  put32(bytes, static_cast<std::uint32_t>(total));
  put32(bytes, static_cast<std::uint32_t>(frames.size()));
  std::size_t pos = header;
  for (const auto& p : packed) {
    put32(bytes, static_cast<std::uint32_t>(pos));
    pos += 32 + p.size();
  }
  for (const auto& p : packed) {
    std::vector<std::uint8_t> field(32, 0);
    if (with_crc) {
      const auto c = static_cast<std::uint32_t>(crc32(0L, p.data(), static_cast<uInt>(p.size())));
      for (int b = 0; b < 4; ++b) field[static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(c >> (8 * b));
    } else {
      field.assign(32, 0xAB);  // opaque vendor checksum
    }
    bytes.insert(bytes.end(), field.begin(), field.end());
    bytes.insert(bytes.end(), p.begin(), p.end());
  }
  return {bytes, StreamSource::standalone_container};
}

VolumeMeta cube_meta(std::size_t n, std::size_t t) {
  VolumeMeta m;
  m.dims = {n, n, n, t};
  m.bounds = {1, 10, -30, 30, -30, 30};
  return m;
}

TEST(Crc32, KnownCheckValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_ieee({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}), 0xCBF43926u);
  EXPECT_EQ(crc32_ieee({}), 0u);
}

TEST(Crc32, MatchesZlibOnRandomBuffers) {
  Rng rng(7);
  for (int n = 0; n < 50; ++n) {
    std::vector<std::uint8_t> buf(rng.index(0, 3000));
    for (auto& b : buf) b = rng.byte();
    EXPECT_EQ(crc32_ieee(buf), crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  }
}

TEST(StreamHeader, TwoFrameFixtureOffsets) {
  Rng rng(1);
  std::vector<std::uint8_t> voxels(4 * 4 * 4 * 2);
  for (auto& v : voxels) v = rng.byte();
  const VolumeSequence vol(cube_meta(4, 2), voxels);
  const RawStream s = encode_volume(vol);

  const FrameIndex idx = parse_stream_header(s);
  EXPECT_EQ(idx.frame_count, 2u);
  EXPECT_EQ(idx.total_size_bytes, s.bytes.size());
  ASSERT_EQ(idx.offsets.size(), 2u);
  EXPECT_EQ(idx.offsets[0], 16u);

  // Independent measurement of frame 0's compressed size.
  uLongf len = compressBound(64);
  std::vector<std::uint8_t> out(len);
  compress2(out.data(), &len, voxels.data(), 64, kCompressionLevel);
  EXPECT_EQ(idx.offsets[1], 16u + 32u + len);
}

TEST(StreamHeader, ZeroFramesIsEmpty) {
  RawStream s;
  put32(s.bytes, 8);
  put32(s.bytes, 0);
  try {
    parse_stream_header(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::input);
    EXPECT_STREQ(e.what(), "empty stream");
  }
}

TEST(StreamHeader, DescendingOffsetsAreCorrupt) {
  RawStream s;
  put32(s.bytes, 200);
  put32(s.bytes, 2);
  put32(s.bytes, 128);
  put32(s.bytes, 16);
  s.bytes.resize(200, 0);
  EXPECT_THROW(
      {
        try {
          parse_stream_header(s);
        } catch (const Error& e) {
          EXPECT_STREQ(e.what(), "corrupt offset table");
          throw;
        }
      },
      Error);
}

TEST(StreamHeader, ShortAndOversizedStreams) {
  RawStream s;
  s.bytes = {1, 2, 3};
  EXPECT_THROW(parse_stream_header(s), Error);
  s.bytes.clear();
  put32(s.bytes, 1000);
  put32(s.bytes, 1);
  put32(s.bytes, 12);
  EXPECT_THROW(parse_stream_header(s), Error);
}

TEST(DecodeFrame, RoundTripRandom4Cube) {
  Rng rng(2);
  std::vector<std::uint8_t> voxels(64);
  for (auto& v : voxels) v = rng.byte();
  const VolumeSequence vol(cube_meta(4, 1), voxels);
  const RawStream s = encode_volume(vol);
  const auto frame = decode_frame(s, parse_stream_header(s), 0, vol.dims());
  EXPECT_EQ(frame, voxels);
}

TEST(DecodeFrame, FlippedPayloadByteFailsUnderStrict) {
  Rng rng(3);
  std::vector<std::uint8_t> voxels(8 * 8 * 8);
  for (auto& v : voxels) v = rng.byte();
  const VolumeSequence vol(cube_meta(8, 1), voxels);
  RawStream s = encode_volume(vol);
  const auto idx = parse_stream_header(s);
  s.bytes[idx.offsets[0] + 32 + 10] ^= 0x01;
  EXPECT_THROW(decode_frame(s, idx, 0, vol.dims(), {.policy = ChecksumPolicy::strict}), Error);
}

TEST(DecodeFrame, FrameNumberOutOfRange) {
  const VolumeSequence vol(cube_meta(2, 2), std::vector<std::uint8_t>(16, 5));
  const RawStream s = encode_volume(vol);
  EXPECT_THROW(decode_frame(s, parse_stream_header(s), 2, vol.dims()), Error);
}

TEST(DecodeFrame, ChecksumPolicies) {
  const VolumeSequence vol(cube_meta(3, 1), std::vector<std::uint8_t>(27, 9));
  RawStream s = encode_volume(vol);
  const auto idx = parse_stream_header(s);
  s.bytes[idx.offsets[0]] ^= 0xFF;  // break the stored CRC, payload intact

  EXPECT_NO_THROW(decode_frame(s, idx, 0, vol.dims(), {.policy = ChecksumPolicy::ignore}));

  std::vector<std::string> warnings;
  DecodeOptions warn{.policy = ChecksumPolicy::warn};
  warn.on_warning = [&](std::string_view w) { warnings.emplace_back(w); };
  EXPECT_EQ(decode_frame(s, idx, 0, vol.dims(), warn), std::vector<std::uint8_t>(27, 9));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("checksum"), std::string::npos);

  try {
    decode_frame(s, idx, 0, vol.dims(), {.policy = ChecksumPolicy::strict});
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "checksum failed");
  }
}

TEST(DecodeVolume, AcceptsForeignEncoderOutput) {
  Rng rng(4);
  const VolumeMeta meta = cube_meta(5, 3);
  std::vector<std::vector<std::uint8_t>> frames(3, std::vector<std::uint8_t>(125));
  for (auto& f : frames)
    for (auto& v : f) v = rng.byte();
  for (bool with_crc : {true, false}) {
    const RawStream s = oracle_stream(frames, with_crc);
    const auto policy = with_crc ? ChecksumPolicy::strict : ChecksumPolicy::ignore;
    const VolumeSequence vol = decode_volume(s, meta, {.policy = policy});
    for (std::size_t t = 0; t < 3; ++t) {
      const auto fr = vol.frame(t);
      EXPECT_TRUE(std::equal(fr.begin(), fr.end(), frames[t].begin()));
    }
  }
}

TEST(DecodeVolume, FrameCountMismatch) {
  const VolumeSequence vol(cube_meta(2, 2), std::vector<std::uint8_t>(16, 1));
  const RawStream s = encode_volume(vol);
  EXPECT_THROW(decode_volume(s, cube_meta(2, 3)), Error);
}

TEST(DecodeVolume, WrongVoxelCountIsSizeMismatch) {
  const VolumeSequence vol(cube_meta(3, 1), std::vector<std::uint8_t>(27, 1));
  const RawStream s = encode_volume(vol);
  try {
    decode_volume(s, cube_meta(2, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()), "frame 0: frame size mismatch");
  }
}

TEST(DecodeVolume, PermutedPayloadAxisOrder) {
  // Payload written theta fastest, then rho, then phi.
  VolumeMeta meta;
  meta.dims = {2, 3, 4, 1};
  meta.bounds = {1, 5, -10, 10, -10, 10};
  const auto value = [](std::size_t i, std::size_t j, std::size_t k) {
    return static_cast<std::uint8_t>(100 * i + 10 * j + k);
  };
  std::vector<std::uint8_t> payload;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k) payload.push_back(value(i, j, k));

  const RawStream s = oracle_stream({payload}, true);
  DecodeOptions opts;
  opts.payload_axis_order = {2, 0, 1};
  const VolumeSequence vol = decode_volume(s, meta, opts);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(vol.at(i, j, k, 0), value(i, j, k));

  opts.payload_axis_order = {0, 0, 1};
  EXPECT_THROW(decode_volume(s, meta, opts), Error);
}

TEST(DecodeVolume, ThreadedMatchesSerialAndReportsLowestFrame) {
  Rng rng(5);
  for (int n = 0; n < 5; ++n) {
    const VolumeSequence vol = testing::random_volume(rng, 12, 8);
    const RawStream s = encode_volume(vol);
    EXPECT_EQ(decode_volume(s, vol.meta(), {.threads = 4}), vol);
  }
  std::vector<std::uint8_t> voxels(4 * 4 * 4 * 6);
  for (auto& v : voxels) v = rng.byte();
  const VolumeSequence vol(cube_meta(4, 6), voxels);
  RawStream s = encode_volume(vol);
  const auto idx = parse_stream_header(s);
  for (std::size_t f : {2u, 4u}) s.bytes[idx.offsets[f] + 32 + 3] ^= 0x5A;
  for (unsigned threads : {1u, 3u}) {
    try {
      decode_volume(s, vol.meta(), {.policy = ChecksumPolicy::strict, .threads = threads});
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(std::string(e.what()).rfind("frame 2:", 0), 0u) << e.what();
    }
  }
}

TEST(EncodeVolume, LayoutChecksumAndDeterminism) {
  Rng rng(6);
  const VolumeSequence vol = testing::random_volume(rng, 10, 4);
  const RawStream a = encode_volume(vol);
  const RawStream b = encode_volume(vol);
  EXPECT_EQ(a.bytes, b.bytes);

  const auto& bytes = a.bytes;
  EXPECT_EQ(le32(bytes, 0), bytes.size());
  const std::size_t t = le32(bytes, 4);
  ASSERT_EQ(t, vol.dims().t);
  for (std::size_t f = 0; f < t; ++f) {
    const std::size_t begin = le32(bytes, 8 + 4 * f);
    const std::size_t end = f + 1 < t ? le32(bytes, 8 + 4 * (f + 1)) : bytes.size();
    const std::uint8_t* payload = bytes.data() + begin + 32;
    const auto plen = static_cast<uInt>(end - begin - 32);
    EXPECT_EQ(le32(bytes, begin), static_cast<std::uint32_t>(crc32(0L, payload, plen)));
    for (std::size_t z = 4; z < 32; ++z) EXPECT_EQ(bytes[begin + z], 0) << "padding byte " << z;

    std::vector<std::uint8_t> out(vol.dims().frame_voxels());
    uLongf olen = static_cast<uLongf>(out.size());
    ASSERT_EQ(uncompress(out.data(), &olen, payload, plen), Z_OK);
    const auto fr = vol.frame(f);
    EXPECT_TRUE(std::equal(fr.begin(), fr.end(), out.begin()));
  }
}

TEST(EncodeVolume, SingleFrameCount) {
  const VolumeSequence vol(cube_meta(2, 1), std::vector<std::uint8_t>(8, 0));
  EXPECT_EQ(le32(encode_volume(vol).bytes, 4), 1u);
}

TEST(CodecProperty, RoundTripRandomVolumes) {
  Rng rng(8);
  for (int n = 0; n < 30; ++n) {
    const VolumeSequence vol = testing::random_volume(rng, 16, 4);
    EXPECT_EQ(decode_volume(encode_volume(vol), vol.meta(), {.policy = ChecksumPolicy::strict}), vol);
  }
}

TEST(CodecProperty, MutationsNeverCrash) {
  Rng rng(9);
  const VolumeSequence vol = testing::random_volume(rng, 8, 3);
  const RawStream good = encode_volume(vol);
  for (int n = 0; n < 300; ++n) {
    RawStream bad = good;
    const std::size_t edits = rng.index(1, 4);
    for (std::size_t e = 0; e < edits; ++e) bad.bytes[rng.index(0, bad.bytes.size() - 1)] = rng.byte();
    if (rng.coin()) bad.bytes.resize(rng.index(0, bad.bytes.size()));
    try {
      const VolumeSequence out = decode_volume(bad, vol.meta(), {.policy = ChecksumPolicy::strict});
      EXPECT_EQ(out.voxels().size(), vol.voxels().size());
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::input) << e.what();
    }
  }
}

}  // namespace
}  // namespace echoslice
