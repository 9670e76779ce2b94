// Copyright 2026 The coher-pvad Authors.
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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "coher_pvad/dataset.hpp"
#include "coher_pvad/embedding.hpp"
#include "coher_pvad/rng.hpp"

using namespace coher_pvad;

namespace {

SpeakerEmbedding basis(std::size_t dim, std::size_t k, float scale = 1.0f) {
  SpeakerEmbedding e;
  e.vector.assign(dim, 0.0f);
  e.vector[k] = scale;
  e.speaker_id = "e" + std::to_string(k);
  return e;
}

// Sum of random-phase sinusoids between lo and hi Hz with a slow syllabic envelope.
WaveBuffer band_voice(double lo, double hi, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n, 0.0);
  for (int k = 0; k < 40; ++k) {
    const double f = rng.uniform(lo, hi);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / 16000.0 + ph);
  }
  for (std::size_t i = 0; i < n; ++i) x[i] *= 0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 4.0 * static_cast<double>(i) / 16000.0);
  return WaveBuffer::mono(std::move(x));
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(EmbeddingFile, UnitVectorUnchanged) {
  const auto e = basis(128, 0);
  const auto path = temp_file("coher_pvad_e1.dvec");
  save_embedding(path, e);
  const auto back = load_embedding(path);
  EXPECT_EQ(back.vector, e.vector);
  EXPECT_EQ(back.speaker_id, "e0");
  std::filesystem::remove(path);
}

TEST(EmbeddingFile, NormOutOfTolerance) {
  const auto bytes = encode_embedding(basis(128, 0, 2.0f));
  io::ByteReader r(bytes, "mem");
  try {
    decode_embedding(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("embedding norm out of tolerance"), std::string::npos);
  }
}

TEST(EmbeddingFile, SlightlyOffNormIsRenormalized) {
  const auto bytes = encode_embedding(basis(16, 3, 1.005f));
  io::ByteReader r(bytes, "mem");
  const auto e = decode_embedding(r);
  EXPECT_NEAR(e.norm(), 1.0, 1e-6);
}

TEST(EmbeddingFile, ZeroVectorRejected) {
  SpeakerEmbedding z;
  z.vector.assign(8, 0.0f);
  const auto bytes = encode_embedding(z);
  io::ByteReader r(bytes, "mem");
  EXPECT_THROW(decode_embedding(r), Error);
}

TEST(EmbeddingFile, RoundTripIsBitwise) {
  const auto e = enroll_speaker(enrollment_utterance(3), 128, 1.6, 0.8, "spk3");
  const auto bytes = encode_embedding(e);
  io::ByteReader r(bytes, "mem");
  const auto back = decode_embedding(r);
  EXPECT_EQ(back, e);
  EXPECT_EQ(encode_embedding(back), bytes);
}

TEST(EmbeddingFile, MalformedRejected) {
  auto bytes = encode_embedding(basis(4, 1));
  bytes.resize(bytes.size() - 2);
  io::ByteReader r(bytes, "mem");
  EXPECT_THROW(decode_embedding(r), Error);
}

TEST(Aggregate, IdenticalVectors) {
  SpeakerEmbedding v;
  v.vector = {0.6f, 0.0f, -0.8f};
  const auto out = aggregate_embeddings({v, v, v, v});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.vector[i], v.vector[i], 1e-7);
}

TEST(Aggregate, TwoBasisVectors) {
  const auto out = aggregate_embeddings({basis(4, 0), basis(4, 1)});
  EXPECT_NEAR(out.vector[0], 1.0 / std::sqrt(2.0), 1e-7);
  EXPECT_NEAR(out.vector[1], 1.0 / std::sqrt(2.0), 1e-7);
  EXPECT_EQ(out.vector[2], 0.0f);
}

TEST(Aggregate, Errors) {
  try {
    aggregate_embeddings({basis(4, 0), basis(4, 0, -1.0f)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate aggregate"), std::string::npos);
  }
  EXPECT_THROW(aggregate_embeddings({}), Error);
  EXPECT_THROW(aggregate_embeddings({basis(4, 0), basis(5, 0)}), Error);
}

TEST(StubEmbedding, Deterministic) {
  const auto w = enrollment_utterance(5);
  const auto a = stub_embedding(w);
  const auto b = stub_embedding(w);
  EXPECT_EQ(a.vector, b.vector);
  EXPECT_NEAR(a.norm(), 1.0, 1e-6);
  EXPECT_EQ(a.dim(), 128u);
}

TEST(StubEmbedding, GainRobust) {
  auto w = enrollment_utterance(6);
  const auto a = stub_embedding(w);
  for (double& s : w.channels[0]) s *= 0.5;
  EXPECT_GT(cosine_similarity(a, stub_embedding(w)), 0.99);
}

TEST(StubEmbedding, DisjointBandSpeakersDiffer) {
  const auto low = band_voice(200.0, 1500.0, 48000, 1);
  const auto high = band_voice(2500.0, 6000.0, 48000, 2);
  EXPECT_LT(cosine_similarity(stub_embedding(low), stub_embedding(high)), 0.9);
}

TEST(StubEmbedding, TooShortRejected) {
  EXPECT_THROW(stub_embedding(WaveBuffer::mono(std::vector<double>(400 + 8 * 160, 0.1))), Error);
  EXPECT_NO_THROW(stub_embedding(WaveBuffer::mono(std::vector<double>(400 + 9 * 160, 0.1))));
}

TEST(StubEmbedding, CustomDimension) {
  const auto e = stub_embedding(enrollment_utterance(1), 48);
  EXPECT_EQ(e.dim(), 48u);
  EXPECT_NEAR(e.norm(), 1.0, 1e-6);
}

TEST(Enrollment, SlidingWindowAggregate) {
  const auto w = enrollment_utterance(2, 4.0);
  const auto e = enroll_speaker(w, 128, 1.6, 0.8, "spk2");
  EXPECT_EQ(e.speaker_id, "spk2");
  EXPECT_NEAR(e.norm(), 1.0, 1e-6);
  // Same speaker, different material, stays closer than another synthetic voice.
  const auto again = speaker_enrollment(2);
  const auto other = speaker_enrollment(9);
  EXPECT_GT(cosine_similarity(e, again), cosine_similarity(e, other));
}

TEST(Enrollment, UnitNormForEverySpeaker) {
  for (std::uint64_t s = 0; s < 16; ++s) EXPECT_NEAR(speaker_enrollment(s).norm(), 1.0, 1e-6);
}
