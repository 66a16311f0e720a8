#include <gtest/gtest.h>

#include "evidex/ingest.hpp"
#include "evidex/pdf.hpp"
#include "support.hpp"

using namespace evidex;

namespace {

pdf::Document open_fixture(const char* name) {
  return pdf::Document::parse(read_file(evidex::testing::data_dir() / name));
}

}  // namespace

// Text expectations are what pypdf extracts from the same files.
TEST(PdfReader, ClassicXrefWithFlate) {
  const auto doc = open_fixture("reportlab_20_pages.pdf");
  ASSERT_EQ(doc.page_count(), 20u);
  EXPECT_EQ(doc.page_lines(0), (std::vector<std::string>{"Page 1 body text"}));
  EXPECT_EQ(doc.page_lines(3), (std::vector<std::string>{"Page 4 body text", "Figure 2. Study flow diagram"}));
  EXPECT_EQ(doc.page_lines(19), (std::vector<std::string>{"Page 20 body text"}));
}

TEST(PdfReader, ObjectStreamsAndXrefStream) {
  const auto doc = open_fixture("pikepdf_objstm_20_pages.pdf");
  ASSERT_EQ(doc.page_count(), 20u);
  EXPECT_EQ(doc.page_lines(3), (std::vector<std::string>{"Page 4 body text", "Figure 2. Study flow diagram"}));
  EXPECT_EQ(doc.page_lines(10), (std::vector<std::string>{"Page 11 body text"}));
}

TEST(PdfReader, NestedPageTree) {
  const auto doc = open_fixture("pikepdf_nested_7_pages.pdf");
  EXPECT_EQ(doc.page_count(), 7u);
  EXPECT_TRUE(doc.page_lines(6).empty());
}

TEST(PdfReader, Uncompressed) {
  const auto doc = open_fixture("reportlab_1_page.pdf");
  ASSERT_EQ(doc.page_count(), 1u);
  EXPECT_EQ(doc.page_lines(0), (std::vector<std::string>{"Only page"}));
}

TEST(PdfReader, RejectsGarbage) {
  EXPECT_THROW(pdf::Document::parse(std::string_view("hello")), pdf::ParseError);
  EXPECT_THROW(pdf::Document::parse(std::string_view("")), pdf::ParseError);
}

TEST(PdfWriter, RoundTripsThroughReader) {
  const std::vector<std::vector<std::string>> pages = {
      {"Study title: (parenthesised) text", "", "back\\slash"},
      {"second page"},
      {}};
  for (bool compress : {false, true}) {
    const auto bytes = pdf::write_text_document(pages, {compress});
    const auto doc = pdf::Document::parse(bytes);
    ASSERT_EQ(doc.page_count(), 3u);
    EXPECT_EQ(doc.page_lines(0), pages[0]) << compress;
    EXPECT_EQ(doc.page_lines(1), pages[1]);
    EXPECT_TRUE(doc.page_lines(2).empty());
    EXPECT_EQ(page_count(bytes), 3);
  }
}

TEST(PdfWriter, ManyPages) {
  std::vector<std::vector<std::string>> pages;
  for (int i = 0; i < 120; ++i) pages.push_back({"Page " + std::to_string(i + 1)});
  const auto doc = pdf::Document::parse(pdf::write_text_document(pages));
  ASSERT_EQ(doc.page_count(), 120u);
  EXPECT_EQ(doc.page_lines(99), (std::vector<std::string>{"Page 100"}));
}
