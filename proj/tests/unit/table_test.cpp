// SPDX-License-Identifier: Apache-2.0
#include "tabflow/error.hpp"
#include "tabflow/table.hpp"
#include "tabflow/text_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tabflow;

TEST(CellValue, NumberMustBeFinite) {
  EXPECT_THROW(CellValue::number(std::nan("")), Error);
  EXPECT_THROW(CellValue::number(INFINITY), Error);
  EXPECT_EQ(CellValue::number(12.5).to_text(), "12.5");
  EXPECT_EQ(CellValue::null().to_text(), "");
}

TEST(CellValue, DateMustBeIso) {
  EXPECT_EQ(CellValue::date("2024-03-01").as_date().iso, "2024-03-01");
  EXPECT_THROW(CellValue::date("March 1"), Error);
}

TEST(ParseTable, QuotedFieldsAndRaggedRows) {
  auto t = parse_table("a,b,c\n\"x, y\",\"he said \"\"hi\"\"\"\n1,2,3,4\n", TableFormat::CSV);
  ASSERT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(t.at(1, 0).as_text(), "x, y");
  EXPECT_EQ(t.at(1, 1).as_text(), "he said \"hi\"");
  EXPECT_TRUE(t.at(1, 2).is_null());
  EXPECT_TRUE(t.at(0, 3).is_null());
}

TEST(ParseTable, MissingMarkersBecomeNull) {
  auto t = parse_table("a\tb\nNA\t-\nnull\tx\n", TableFormat::TSV);
  EXPECT_TRUE(t.at(1, 0).is_null());
  EXPECT_TRUE(t.at(1, 1).is_null());
  EXPECT_TRUE(t.at(2, 0).is_null());
  EXPECT_EQ(t.at(2, 1).as_text(), "x");
}

TEST(ParseTable, RejectsInvalidUtf8AndEmptyInput) {
  try {
    parse_table("a,b\n\xff\xfe,1\n", TableFormat::CSV);
    FAIL() << "expected DecodeError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DecodeError);
  }
  try {
    parse_table("", TableFormat::CSV);
    FAIL() << "expected EmptyInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
}

TEST(RawTable, OverlappingMergesRejected) {
  Grid g{{CellValue::text("a"), CellValue::text("b"), CellValue::text("c")}};
  EXPECT_THROW(RawTable(g, {{0, 0, 0, 1}, {0, 1, 0, 2}}), Error);
  EXPECT_THROW(RawTable(g, {{0, 0, 0, 5}}), Error);
  EXPECT_NO_THROW(RawTable(g, {{0, 0, 0, 1}}));
}

TEST(MergeSidecar, ParsesRectangles) {
  auto m = parse_merge_sidecar("[[0,1,0,2],[1,0,2,0]]");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (MergeRegion{0, 1, 0, 2}));
  EXPECT_THROW(parse_merge_sidecar("[[0,1]]"), Error);
}

TEST(CollectionStandards, FlagsSizeAndShape) {
  auto ok = parse_table("a,b\n1,2\n3,4\n", TableFormat::CSV);
  EXPECT_TRUE(check_collection_standards(ok, 16).passed);
  auto big = check_collection_standards(ok, kMaxTableBytes + 1);
  EXPECT_FALSE(big.passed);
  auto header_only = parse_table("a,b\n", TableFormat::CSV);
  EXPECT_FALSE(check_collection_standards(header_only, 4).passed);
}

TEST(SerializeCsv, QuotesWhenNeeded) {
  ProcessedTable t;
  t.header = {"name", "note"};
  t.body = {{CellValue::text("a,b"), CellValue::text("say \"x\"")}, {CellValue::number(3), CellValue::null()}};
  EXPECT_EQ(serialize_csv(t), "name,note\n\"a,b\",\"say \"\"x\"\"\"\n3,\n");
}

TEST(TextUtil, NumbersRoundTrip) {
  EXPECT_EQ(text::parse_number("-1.5e3"), -1500.0);
  EXPECT_FALSE(text::parse_number("1,000"));
  EXPECT_FALSE(text::parse_number("inf"));
  EXPECT_EQ(text::format_number(1214), "1214");
  EXPECT_EQ(text::format_number(0.1), "0.1");
  EXPECT_EQ(text::format_answer_number(2.0 / 3.0), "0.6667");
  EXPECT_EQ(text::format_answer_number(5.0), "5");
}

TEST(TextUtil, Sha256KnownVector) {
  EXPECT_EQ(text::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
