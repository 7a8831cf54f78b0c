// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rdr/activation_store.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "rdr/npy.hpp"
#include "test_support.hpp"

namespace rdr {
namespace {

using testing::TempDir;

const std::filesystem::path kNumpyDump = std::filesystem::path(RDR_TEST_DATA) / "numpy_dump";

ActivationDataset small_dataset(std::size_t n, std::vector<LayerSpec> layers) {
  std::vector<std::vector<float>> data;
  for (const auto& l : layers) {
    std::vector<float> v(n * l.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 7) - 3.0f;
    data.push_back(std::move(v));
  }
  return ActivationDataset::create(std::move(layers), std::move(data), n);
}

TEST(Ingest, ReadsNumpyWrittenDump) {
  const auto ds = ingest(kNumpyDump);
  ASSERT_EQ(ds.num_instances(), 4u);
  ASSERT_EQ(ds.manifest().size(), 3u);
  EXPECT_EQ(ds.layer(2).shape, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(ds.layer(7).name, "fc7");

  // Values printed by numpy when the fixture was generated.
  const auto row = ds.row(1, 2);
  EXPECT_FLOAT_EQ(row[0], 0.4898420572280884f);
  EXPECT_FLOAT_EQ(row[3], -0.9304680228233337f);
  // conv element (c=1, y=0, x=1) of instance 3, channel-major flattening.
  EXPECT_FLOAT_EQ(ds.row(2, 3)[flatten(ds.layer(2), {1, 0, 1})], 2.0004165f);

  EXPECT_EQ(ds.instance_ids()[1], "img_b");
  ASSERT_TRUE(ds.metadata().labels);
  EXPECT_EQ((*ds.metadata().labels)[1], 1);
  EXPECT_EQ((*ds.metadata().predictions)[3], 1);
  EXPECT_EQ((*ds.metadata().subclasses)[1], "siamese");
  EXPECT_EQ(ds.find_instance("img_c"), 2u);
}

TEST(Npy, WriterMatchesNumpyBytes) {
  const auto array = npy::read_f32(kNumpyDump / "layer_1.npy");
  TempDir dir;
  npy::write_f32(dir / "copy.npy", array.shape, array.data);
  EXPECT_EQ(testing::read_file(dir / "copy.npy"), testing::read_file(kNumpyDump / "layer_1.npy"));
}

TEST(Npy, RejectsFloat64) {
  EXPECT_THROW(npy::read_f32(std::filesystem::path(RDR_TEST_DATA) / "f64.npy"), SchemaError);
}

TEST(Ingest, RoundTripsDeclaredShapes) {
  TempDir dir;
  const auto ds = small_dataset(100, {{1, "a", {8}}, {2, "b", {4, 2, 2}}, {5, "c", {3}}});
  write_dump(ds, dir.path());
  const auto back = ingest(dir.path());
  EXPECT_EQ(back.num_instances(), 100u);
  EXPECT_EQ(back.manifest(), ds.manifest());
  EXPECT_EQ(back.canonical_bytes(), ds.canonical_bytes());
}

TEST(Ingest, IsDeterministic) {
  EXPECT_EQ(ingest(kNumpyDump).canonical_bytes(), ingest(kNumpyDump).canonical_bytes());
}

TEST(Ingest, ConvWidthMismatchIsSchemaError) {
  TempDir dir;
  const auto ds = small_dataset(6, {{1, "flat15", {15}}});
  write_dump(ds, dir.path());
  testing::write_file(dir / "manifest.json",
                      R"({"layers": [{"layer_id": 1, "name": "c", "shape": [4, 2, 2]}],
                          "num_instances": 6})");
  EXPECT_THROW(ingest(dir.path()), SchemaError);
}

TEST(Ingest, NanIsDataErrorWithLocation) {
  TempDir dir;
  auto base = small_dataset(10, {{1, "a", {4}}, {3, "b", {6}}});
  write_dump(base, dir.path());
  std::vector<float> values(base.activations(3).begin(), base.activations(3).end());
  values[7 * 6 + 2] = std::numeric_limits<float>::quiet_NaN();
  const std::size_t shape[] = {10, 6};
  npy::write_f32(dir / "layer_3.npy", shape, values);
  try {
    ingest(dir.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.layer_id(), 3);
    EXPECT_EQ(e.instance(), 7u);
    EXPECT_NE(std::string(e.what()).find("instance 7"), std::string::npos);
  }
}

TEST(Ingest, MissingFilesAreIngestErrors) {
  TempDir dir;
  EXPECT_THROW(ingest(dir.path()), IngestError);
  write_dump(small_dataset(3, {{1, "a", {2}}}), dir.path());
  std::filesystem::remove(dir / "layer_1.npy");
  EXPECT_THROW(ingest(dir.path()), IngestError);
}

TEST(Ingest, InstanceCountMismatch) {
  TempDir dir;
  write_dump(small_dataset(3, {{1, "a", {2}}}), dir.path());
  testing::write_file(dir / "manifest.json",
                      R"({"layers": [{"layer_id": 1, "name": "a", "shape": [2]}], "num_instances": 4})");
  EXPECT_THROW(ingest(dir.path()), SchemaError);
}

TEST(Ingest, MetadataColumnsAreOptional) {
  TempDir dir;
  write_dump(small_dataset(3, {{1, "a", {2}}}), dir.path());
  testing::write_file(dir / "meta.csv", "instance_id,subclass\nx,p\ny,q\nz,p\n");
  const auto ds = ingest(dir.path());
  EXPECT_FALSE(ds.metadata().labels);
  EXPECT_FALSE(ds.metadata().predictions);
  ASSERT_TRUE(ds.metadata().subclasses);
  EXPECT_EQ(ds.instance_ids()[2], "z");

  std::filesystem::remove(dir / "meta.csv");
  EXPECT_EQ(ingest(dir.path()).instance_ids()[1], "1");
}

TEST(Ingest, RejectsBadMetadata) {
  TempDir dir;
  write_dump(small_dataset(3, {{1, "a", {2}}}), dir.path());
  testing::write_file(dir / "meta.csv", "instance_id\nx\nx\ny\n");
  EXPECT_THROW(ingest(dir.path()), SchemaError);
  testing::write_file(dir / "meta.csv", "instance_id,label\nx,1\ny,cat\nz,0\n");
  EXPECT_THROW(ingest(dir.path()), SchemaError);
  testing::write_file(dir / "meta.csv", "instance_id\nx\ny\n");
  EXPECT_THROW(ingest(dir.path()), SchemaError);
}

TEST(Dataset, ValidatesManifest) {
  EXPECT_THROW(small_dataset(2, {{2, "a", {2}}, {1, "b", {2}}}), SchemaError);
  EXPECT_THROW(small_dataset(2, {{1, "a", {2}}, {1, "b", {2}}}), SchemaError);
  EXPECT_THROW(small_dataset(2, {{1, "a", {2, 2}}}), SchemaError);
  EXPECT_THROW(small_dataset(2, {{1, "a", {0}}}), SchemaError);
}

TEST(NeuronCount, SumsRequestedLayers) {
  const auto ds = small_dataset(2, {{1, "fc", {512}}, {2, "conv", {4, 2, 2}}});
  const std::vector<int> one{1}, both{1, 2}, none{}, unknown{9};
  EXPECT_EQ(neuron_count(ds, one), 512u);
  EXPECT_EQ(neuron_count(ds, both), 528u);
  EXPECT_EQ(neuron_count(ds, none), 0u);
  EXPECT_THROW(neuron_count(ds, unknown), QueryError);
}

TEST(ChannelMajor, FlattenIsBijective) {
  for (const auto& shape : std::vector<std::vector<std::size_t>>{{4, 2, 2}, {3, 5, 7}, {1, 1, 9}}) {
    const LayerSpec spec{1, "c", shape};
    std::vector<bool> hit(spec.size(), false);
    for (std::size_t c = 0; c < shape[0]; ++c) {
      for (std::size_t y = 0; y < shape[1]; ++y) {
        for (std::size_t x = 0; x < shape[2]; ++x) {
          const auto idx = flatten(spec, {c, y, x});
          ASSERT_LT(idx, spec.size());
          EXPECT_FALSE(hit[idx]);
          hit[idx] = true;
          EXPECT_EQ(unflatten(spec, idx), (ConvCoord{c, y, x}));
        }
      }
    }
  }
  const LayerSpec spec{1, "c", {4, 2, 2}};
  EXPECT_EQ(flatten(spec, {1, 1, 0}), 1u * 4 + 1 * 2 + 0);
  EXPECT_THROW(unflatten(spec, 16), QueryError);
}

}  // namespace
}  // namespace rdr
