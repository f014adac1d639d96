#include <gtest/gtest.h>

#include <filesystem>

#include "circuits/dataset.hpp"
#include "circuits/error.hpp"

using namespace circuits;

namespace {

SyntheticDatasetSpec small(DatasetKind kind, std::uint64_t seed) {
  SyntheticDatasetSpec s;
  s.kind = kind;
  s.samples_per_class = 6;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Dataset, DeterministicAndBalanced) {
  for (DatasetKind kind : {DatasetKind::two_category_shapes, DatasetKind::blobs, DatasetKind::arcs_vs_corners}) {
    const Dataset a = generate_dataset(small(kind, 3)), b = generate_dataset(small(kind, 3));
    EXPECT_EQ(a.images, b.images);
    EXPECT_EQ(a.labels, b.labels);
    ASSERT_EQ(a.size(), 12u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.labels[i], i % 2);
    EXPECT_EQ(a.class_images(1).size(), 6u);
    EXPECT_EQ(a.images[0].shape(), (Shape{1, 16, 16}));
    EXPECT_NE(generate_dataset(small(kind, 4)).images, a.images);
  }
  EXPECT_THROW(dataset_kind_from_string("faces"), ValidationError);
  SyntheticDatasetSpec tiny = small(DatasetKind::blobs, 0);
  tiny.image_size = 4;
  EXPECT_THROW(generate_dataset(tiny), ValidationError);
}

TEST(Dataset, ArchiveRoundTrip) {
  const Dataset d = generate_dataset(small(DatasetKind::two_category_shapes, 5));
  const std::string bytes = serialize_dataset(d);
  const Dataset back = deserialize_dataset(bytes);
  EXPECT_EQ(back.images, d.images);
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_EQ(back.class_names, d.class_names);
  EXPECT_EQ(serialize_dataset(back), bytes);

  std::string bad = bytes;
  bad[0] = 'Z';
  EXPECT_THROW(deserialize_dataset(bad), FormatError);
  EXPECT_THROW(deserialize_dataset(bytes.substr(0, bytes.size() - 1)), TruncatedError);
  EXPECT_THROW(deserialize_dataset(bytes + "!"), FormatError);
}

TEST(Dataset, LoadImagesFromFileOrDirectory) {
  const auto dir = std::filesystem::temp_directory_path() / "circuits_dataset_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const Dataset a = generate_dataset(small(DatasetKind::blobs, 1));
  const Dataset b = generate_dataset(small(DatasetKind::blobs, 2));
  save_dataset(b, dir / "b.cfdata");
  save_dataset(a, dir / "a.cfdata");
  EXPECT_EQ(load_images(dir / "a.cfdata"), a.images);
  const auto all = load_images(dir);
  ASSERT_EQ(all.size(), 24u);
  EXPECT_EQ(all.front(), a.images.front());
  EXPECT_EQ(all.back(), b.images.back());
  EXPECT_THROW(load_images(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  EXPECT_THROW(load_images(dir), IoError);
  std::filesystem::remove_all(dir);
}
