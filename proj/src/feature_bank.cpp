/*
 * Copyright 2026 The probens Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "probens/feature_bank.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <string>

#include <json.hpp>

#include "probens/bytes.hpp"

namespace probens {
namespace {

using nlohmann::json;

bool bits_equal(const MatrixF& a, const MatrixF& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

json manifest_to_json(const BankManifest& m) {
  json taps = json::array();
  for (const auto& t : m.tap_points) taps.push_back({{"name", t.name}, {"dim", t.dim}});
  return {{"n_samples", m.n_samples},
          {"n_classes", m.n_classes},
          {"tap_points", taps},
          {"has_labels", m.has_labels},
          {"has_original_preds", m.has_original_preds},
          {"domain_ids_present", m.domain_ids_present},
          {"dtype", m.dtype}};
}

BankManifest manifest_from_json(const json& j) {
  BankManifest m;
  try {
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.n_classes = j.at("n_classes").get<std::size_t>();
    for (const auto& t : j.at("tap_points")) {
      m.tap_points.push_back({t.at("name").get<std::string>(), t.at("dim").get<std::size_t>()});
    }
    m.has_labels = j.at("has_labels").get<bool>();
    m.has_original_preds = j.at("has_original_preds").get<bool>();
    m.domain_ids_present = j.at("domain_ids_present").get<bool>();
    m.dtype = j.at("dtype").get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void validate_manifest(const BankManifest& m) {
  if (m.n_samples < 1) throw ValidationError("manifest: n_samples must be >= 1");
  if (m.n_classes < 2) throw ValidationError("manifest: n_classes must be >= 2");
  if (m.n_classes > 65535) throw ValidationError("manifest: n_classes exceeds u16 label range");
  if (m.dtype != "f32le") throw ValidationError("manifest: unsupported dtype " + m.dtype);
  std::set<std::string> names;
  for (const auto& t : m.tap_points) {
    if (t.dim < 1) throw ValidationError("manifest: tap point '" + t.name + "' has dim 0");
    if (!names.insert(t.name).second) {
      throw ValidationError("manifest: duplicate tap name '" + t.name + "'");
    }
  }
}

}  // namespace

bool FeatureBank::bit_equal(const FeatureBank& o) const {
  if (!(manifest == o.manifest) || features.size() != o.features.size()) return false;
  for (std::size_t t = 0; t < features.size(); ++t) {
    if (!bits_equal(features[t], o.features[t])) return false;
  }
  if (labels != o.labels || domain_ids != o.domain_ids) return false;
  if (original_preds.has_value() != o.original_preds.has_value()) return false;
  return !original_preds || bits_equal(*original_preds, *o.original_preds);
}

BankManifest derive_manifest(std::size_t n_classes, const std::vector<TapPoint>& taps,
                             const FeatureBank& payload) {
  BankManifest m;
  m.n_samples = payload.features.empty() ? 0 : payload.features.front().rows();
  m.n_classes = n_classes;
  m.tap_points = taps;
  m.has_labels = payload.labels.has_value();
  m.has_original_preds = payload.original_preds.has_value();
  m.domain_ids_present = payload.domain_ids.has_value();
  return m;
}

void validate(const FeatureBank& bank) {
  const auto& m = bank.manifest;
  validate_manifest(m);
  const std::size_t n = m.n_samples;
  if (bank.features.size() != m.tap_points.size()) {
    throw ValidationError("feature matrix count does not match manifest tap points");
  }
  for (std::size_t t = 0; t < bank.features.size(); ++t) {
    const auto& f = bank.features[t];
    const auto& tap = m.tap_points[t];
    if (f.rows() != n || f.cols() != tap.dim) {
      throw ValidationError("tap point '" + tap.name + "' has shape " + std::to_string(f.rows()) +
                            "x" + std::to_string(f.cols()) + ", manifest says " +
                            std::to_string(n) + "x" + std::to_string(tap.dim));
    }
    for (float v : f.values()) {
      if (!std::isfinite(v)) throw ValidationError("NaN/Inf in features of tap '" + tap.name + "'");
    }
  }
  if (m.has_labels != bank.labels.has_value()) {
    throw ValidationError("manifest has_labels disagrees with payload");
  }
  if (bank.labels) {
    if (bank.labels->size() != n) throw ValidationError("labels row count differs from n_samples");
    for (auto y : *bank.labels) {
      if (y >= m.n_classes) throw ValidationError("label out of range: " + std::to_string(y));
    }
  }
  if (m.has_original_preds != bank.original_preds.has_value()) {
    throw ValidationError("manifest has_original_preds disagrees with payload");
  }
  if (bank.original_preds) {
    const auto& p = *bank.original_preds;
    if (p.rows() != n || p.cols() != m.n_classes) {
      throw ValidationError("original_preds shape differs from N x C");
    }
    require_row_stochastic(to_double(p), kOriginalPredsRowTol, "original_preds");
  }
  if (m.domain_ids_present != bank.domain_ids.has_value()) {
    throw ValidationError("manifest domain_ids_present disagrees with payload");
  }
  if (bank.domain_ids && bank.domain_ids->size() != n) {
    throw ValidationError("domain_ids row count differs from n_samples");
  }
}

std::vector<std::uint8_t> encode_bank(const FeatureBank& bank) {
  validate(bank);
  std::vector<std::uint8_t> out;
  bytes::put_raw(out, std::string_view(kBankMagic, sizeof kBankMagic));
  const std::string header = manifest_to_json(bank.manifest).dump();
  bytes::put_u32(out, static_cast<std::uint32_t>(header.size()));
  bytes::put_raw(out, header);
  for (const auto& f : bank.features) {
    for (float v : f.values()) bytes::put_f32(out, v);
  }
  if (bank.labels) {
    for (auto y : *bank.labels) bytes::put_u16(out, y);
  }
  if (bank.original_preds) {
    for (float v : bank.original_preds->values()) bytes::put_f32(out, v);
  }
  if (bank.domain_ids) {
    for (auto d : *bank.domain_ids) bytes::put_u16(out, d);
  }
  return out;
}

FeatureBank decode_bank(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  if (!in.has(sizeof kBankMagic) ||
      std::memcmp(data.data(), kBankMagic, sizeof kBankMagic) != 0) {
    throw ValidationError("bad magic: not an FBNK1 file");
  }
  in.take(sizeof kBankMagic, "magic");
  const auto header_len = in.u32("manifest length");
  auto header = in.take(header_len, "manifest");
  json j;
  try {
    j = json::parse(header.begin(), header.end());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  FeatureBank bank;
  bank.manifest = manifest_from_json(j);
  validate_manifest(bank.manifest);
  const auto& m = bank.manifest;
  const std::size_t n = m.n_samples;

  auto need = [&](std::size_t count, std::size_t width, const std::string& what) {
    if (!in.has(count * width)) {
      throw ValidationError("size mismatch: " + what + " expects " +
                            std::to_string(count * width) + " bytes, " +
                            std::to_string(in.remaining()) + " remain");
    }
  };

  for (const auto& tap : m.tap_points) {
    const std::string what = "tap point '" + tap.name + "'";
    need(n * tap.dim, 4, what);
    MatrixF f(n, tap.dim);
    for (auto& v : f.values()) v = in.f32(what);
    bank.features.push_back(std::move(f));
  }
  if (m.has_labels) {
    need(n, 2, "labels");
    std::vector<std::uint16_t> labels(n);
    for (auto& y : labels) y = in.u16("labels");
    bank.labels = std::move(labels);
  }
  if (m.has_original_preds) {
    need(n * m.n_classes, 4, "original_preds");
    MatrixF p(n, m.n_classes);
    for (auto& v : p.values()) v = in.f32("original_preds");
    bank.original_preds = std::move(p);
  }
  if (m.domain_ids_present) {
    need(n, 2, "domain_ids");
    std::vector<std::uint16_t> ids(n);
    for (auto& d : ids) d = in.u16("domain_ids");
    bank.domain_ids = std::move(ids);
  }
  if (in.remaining() != 0) {
    throw ValidationError("size mismatch: " + std::to_string(in.remaining()) +
                          " trailing bytes after payload");
  }
  validate(bank);
  return bank;
}

void write_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  const auto data = encode_bank(bank);
  bytes::write_file(path, data);
}

FeatureBank read_bank(const std::filesystem::path& path) {
  return decode_bank(bytes::read_file(path));
}

FeatureBank slice_rows(const FeatureBank& bank, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("empty selection");
  const std::size_t n = bank.n_samples();
  for (auto i : indices) {
    if (i >= n) {
      throw ValidationError("row index " + std::to_string(i) + " out of range [0," +
                            std::to_string(n) + ")");
    }
  }
  FeatureBank out;
  out.manifest = bank.manifest;
  out.manifest.n_samples = indices.size();
  for (const auto& f : bank.features) out.features.push_back(gather_rows(f, indices));
  auto pick = [&](const std::vector<std::uint16_t>& v) {
    std::vector<std::uint16_t> r(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) r[k] = v[indices[k]];
    return r;
  };
  if (bank.labels) out.labels = pick(*bank.labels);
  if (bank.domain_ids) out.domain_ids = pick(*bank.domain_ids);
  if (bank.original_preds) out.original_preds = gather_rows(*bank.original_preds, indices);
  return out;
}

FeatureBank with_labels(const FeatureBank& bank, std::vector<std::uint16_t> labels) {
  FeatureBank out = bank;
  out.labels = std::move(labels);
  out.manifest.has_labels = true;
  validate(out);
  return out;
}

}  // namespace probens
