#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "echoslice/container.hpp"
#include "echoslice/dicom.hpp"
#include "echoslice/error.hpp"
#include "support.hpp"

namespace echoslice {
namespace {

using testing::Rng;

// Hand-rolled explicit VR LE element writer, independent of the library's fixture writer.
struct DicomBuilder {
  std::vector<std::uint8_t> bytes;

  void u16(std::uint16_t v) {
    bytes.push_back(static_cast<std::uint8_t>(v));
    bytes.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void element(std::uint16_t g, std::uint16_t e, const char* vr, const std::vector<std::uint8_t>& value,
               bool long_form) {
    u16(g);
    u16(e);
    bytes.push_back(static_cast<std::uint8_t>(vr[0]));
    bytes.push_back(static_cast<std::uint8_t>(vr[1]));
    if (long_form) {
      u16(0);
      u32(static_cast<std::uint32_t>(value.size()));
    } else {
      u16(static_cast<std::uint16_t>(value.size()));
    }
    bytes.insert(bytes.end(), value.begin(), value.end());
  }
  void text(std::uint16_t g, std::uint16_t e, const char* vr, std::string s) {
    if (s.size() % 2) s += ' ';
    element(g, e, vr, {s.begin(), s.end()}, false);
  }
  // Undefined-length sequence with one undefined-length item.
  void nested_sequence() {
    u16(0x0008);
    u16(0x1115);
    bytes.push_back('S');
    bytes.push_back('Q');
    u16(0);
    u32(0xFFFFFFFF);
    u16(0xFFFE);
    u16(0xE000);
    u32(0xFFFFFFFF);
    text(0x0008, 0x1150, "UI", "1.2.3");
    u16(0xFFFE);
    u16(0xE00D);
    u32(0);
    u16(0xFFFE);
    u16(0xE0DD);
    u32(0);
  }
};

VolumeMeta small_meta() {
  VolumeMeta m;
  m.dims = {4, 4, 4, 2};
  m.bounds = {1, 12, -40, 40, -35, 35};
  m.frame_interval_ms = 33.0;
  return m;
}

TEST(Container, RoundTripAndMagic) {
  Rng rng(11);
  const VolumeSequence vol = testing::random_volume(rng, 8, 3);
  const auto bytes = encode_container(vol);
  EXPECT_TRUE(has_container_magic(bytes));
  EXPECT_EQ(decode_container(bytes), vol);
  const Container c = read_container(bytes);
  EXPECT_EQ(c.meta, vol.meta());
  EXPECT_EQ(c.stream.bytes, encode_volume(vol).bytes);
}

TEST(Container, RejectsBadInput) {
  const VolumeSequence vol(small_meta(), std::vector<std::uint8_t>(128, 3));
  auto bytes = encode_container(vol);
  auto wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(read_container(wrong_version), Error);
  EXPECT_THROW(read_container(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 12)), Error);
  EXPECT_THROW(read_container(std::vector<std::uint8_t>{'X', 'Y', 'Z', 'W', 1, 0, 0, 0, 0}), Error);
  auto bad_json = bytes;
  bad_json[9] = '!';
  EXPECT_THROW(read_container(bad_json), Error);
}

TEST(Container, AtomicWriteLeavesNoTemporaries) {
  testing::TempDir dir;
  const std::vector<std::uint8_t> data{1, 2, 3};
  write_file_atomic(dir / "sub/x.bin", data);
  write_file_atomic(dir / "sub/x.bin", data);
  EXPECT_EQ(read_file(dir / "sub/x.bin"), data);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "sub")) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(read_file(dir / "missing"), Error);
}

TEST(DicomTag, ParseForms) {
  const DicomTag want{0x200D, 0x3001};
  EXPECT_EQ(DicomTag::parse("200D,3001"), want);
  EXPECT_EQ(DicomTag::parse("(200d,3001)"), want);
  EXPECT_EQ(DicomTag::parse("0x200D,0x3001"), want);
  EXPECT_EQ(want.str(), "(200D,3001)");
  EXPECT_THROW(DicomTag::parse("200D"), Error);
  EXPECT_THROW(DicomTag::parse("zz,3001"), Error);
}

TEST(Dicom, FixtureRoundTripDims) {
  Rng rng(12);
  std::vector<std::uint8_t> voxels(4 * 4 * 4 * 2);
  for (auto& v : voxels) v = rng.byte();
  const VolumeSequence vol(small_meta(), voxels);
  const TagConfig cfg;
  const auto file = write_dicom_fixture(vol.meta(), encode_volume(vol), cfg);
  EXPECT_TRUE(looks_like_dicom(file));

  const DicomPayload p = parse_dicom_private_payload(file, cfg);
  EXPECT_EQ(p.meta.dims, (VolumeDims{4, 4, 4, 2}));
  EXPECT_NEAR(p.meta.bounds.rho_max, 12.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.phi_min, -40.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.theta_max, 35.0, 1e-12);
  ASSERT_TRUE(p.meta.frame_interval_ms);
  EXPECT_DOUBLE_EQ(*p.meta.frame_interval_ms, 33.0);
  EXPECT_EQ(p.stream.source, StreamSource::dicom_private_tag);
  EXPECT_EQ(decode_volume(p.stream, p.meta), vol);
}

TEST(Dicom, MissingTagsAndTruncation) {
  DicomBuilder b;
  b.text(0x0008, 0x0060, "CS", "US");
  try {
    parse_dicom_private_payload(b.bytes, TagConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("required private tag absent", 0), 0u) << e.what();
  }

  DicomBuilder t;
  t.element(0x200D, 0x3003, "OB", std::vector<std::uint8_t>(64, 1), true);
  t.bytes.resize(t.bytes.size() - 10);
  try {
    walk_dicom(t.bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "truncated DICOM element");
  }
}

TEST(Dicom, HandBuiltFileWithTextValuesAndSequences) {
  // Metres and degrees in decimal strings, plus an undefined-length sequence to skip.
  VolumeMeta meta = small_meta();
  meta.frame_interval_ms.reset();
  const VolumeSequence vol(meta, std::vector<std::uint8_t>(128, 77));
  const RawStream stream = encode_volume(vol);

  DicomBuilder b;
  b.text(0x0008, 0x0060, "CS", "US");
  b.nested_sequence();
  b.text(0x200D, 0x3001, "IS", "4\\4\\4\\2");
  b.text(0x200D, 0x3002, "DS", "0.01\\0.12\\-40\\40\\-35\\35");
  b.element(0x200D, 0x3003, "OB", stream.bytes, true);

  TagConfig cfg;
  cfg.angle_unit = AngleUnit::degrees;
  const DicomPayload p = parse_dicom_private_payload(b.bytes, cfg);
  EXPECT_EQ(p.meta.dims, meta.dims);
  EXPECT_NEAR(p.meta.bounds.rho_min, 1.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.rho_max, 12.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.phi_max, 40.0, 1e-12);
  EXPECT_FALSE(p.meta.frame_interval_ms);
  EXPECT_EQ(decode_volume(p.stream, p.meta), vol);
}

TEST(Dicom, RadiansConvertToDegrees) {
  DicomBuilder b;
  std::vector<std::uint8_t> fd;
  const double bounds[6] = {0.0, 0.1, -std::numbers::pi / 4, std::numbers::pi / 4, -std::numbers::pi / 6,
                            std::numbers::pi / 6};
  for (double v : bounds) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(&v);
    fd.insert(fd.end(), raw, raw + 8);
  }
  std::vector<std::uint8_t> ul;
  for (std::uint32_t v : {2u, 2u, 2u, 1u})
    for (int s = 0; s < 32; s += 8) ul.push_back(static_cast<std::uint8_t>(v >> s));
  const VolumeSequence vol([] {
    VolumeMeta m;
    m.dims = {2, 2, 2, 1};
    m.bounds = {0, 10, -45, 45, -30, 30};
    return m;
  }(), std::vector<std::uint8_t>(8, 1));

  b.element(0x200D, 0x3001, "UL", ul, false);
  b.element(0x200D, 0x3002, "FD", fd, false);
  b.element(0x200D, 0x3003, "OB", encode_volume(vol).bytes, true);
  const DicomPayload p = parse_dicom_private_payload(b.bytes, TagConfig{});
  EXPECT_NEAR(p.meta.bounds.rho_max, 10.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.phi_min, -45.0, 1e-12);
  EXPECT_NEAR(p.meta.bounds.theta_max, 30.0, 1e-12);
}

TEST(Dicom, ImplicitVrIsRejected) {
  DicomBuilder b;
  b.u16(0x0008);
  b.u16(0x0060);
  b.u32(2);
  b.bytes.push_back('U');
  b.bytes.push_back('S');
  EXPECT_THROW(walk_dicom(b.bytes), Error);
}

TEST(Dicom, TagConfigJson) {
  TagConfig c;
  c.angle_unit = AngleUnit::degrees;
  c.rho_to_cm = 0.1;
  c.frame_interval.reset();
  c.payload_axis_order = {2, 1, 0};
  const TagConfig back = nlohmann::json(c).get<TagConfig>();
  EXPECT_EQ(back.dims, c.dims);
  EXPECT_EQ(back.angle_unit, AngleUnit::degrees);
  EXPECT_EQ(back.rho_to_cm, 0.1);
  EXPECT_FALSE(back.frame_interval);
  EXPECT_EQ(back.payload_axis_order, c.payload_axis_order);
  EXPECT_THROW(nlohmann::json({{"angle_unit", "gradians"}}).get<TagConfig>(), Error);
}

TEST(DicomProperty, MutationsNeverCrash) {
  Rng rng(13);
  const VolumeSequence vol(small_meta(), std::vector<std::uint8_t>(128, 5));
  const auto good = write_dicom_fixture(vol.meta(), encode_volume(vol), TagConfig{});
  for (int n = 0; n < 300; ++n) {
    auto bad = good;
    for (std::size_t e = rng.index(1, 6); e > 0; --e) bad[rng.index(0, bad.size() - 1)] = rng.byte();
    if (rng.coin()) bad.resize(rng.index(0, bad.size()));
    try {
      const auto p = parse_dicom_private_payload(bad, TagConfig{});
      decode_volume(p.stream, p.meta);
    } catch (const Error&) {
    }
  }
  SUCCEED();
}

}  // namespace
}  // namespace echoslice
