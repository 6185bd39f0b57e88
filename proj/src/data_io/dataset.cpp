// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xmf/bytes.hpp"
#include "xmf/data.hpp"
#include "xmf/errors.hpp"

namespace xmf::data {

std::size_t MultimodalSample::present_count() const {
  return static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
}

void MultimodalSample::validate() const {
  if (present_count() == 0) throw ParameterError("sample has no present modality");
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const Tensor& f = features[m];
    if (f.rank() != 2) {
      throw DimensionError(std::string(kModalityNames[m]) + " features must be rank 2, got " +
                           shape_str(f.shape()));
    }
    if (present[m] && f.rows() == 0) {
      throw DimensionError(std::string(kModalityNames[m]) + " is present but has no frames");
    }
  }
}

// --- missing modalities ------------------------------------------------------

DropDraw draw_drop(Rng& rng, double p, const std::array<bool, kNumModalities>& present) {
  DropDraw d;
  std::size_t kept = 0;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    d.dropped[m] = rng.bernoulli(p);
    d.kept[m] = present[m] && !d.dropped[m];
    kept += d.kept[m];
  }
  if (kept == 0) {
    std::vector<std::size_t> candidates;
    for (std::size_t m = 0; m < kNumModalities; ++m)
      if (present[m]) candidates.push_back(m);
    if (!candidates.empty()) d.kept[candidates[rng.index(candidates.size())]] = true;
  }
  return d;
}

Dataset apply_missing(const Dataset& ds, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ParameterError("missing rate must lie in [0, 1], got " + std::to_string(p));
  }
  Rng rng(derive_seed(seed, "missing"));
  Dataset out = ds;
  for (MultimodalSample& s : out) {
    const DropDraw d = draw_drop(rng, p, s.present);
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      if (s.present[m] && !d.kept[m]) {
        s.present[m] = false;
        std::fill(s.features[m].data().begin(), s.features[m].data().end(), 0.0);
      }
    }
  }
  return out;
}

// --- MMF1 ----------------------------------------------------------------------

namespace {

constexpr char kMmfMagic[4] = {'M', 'M', 'F', '1'};

using bytes::put_le;
using bytes::Reader;

}  // namespace

std::vector<std::uint8_t> mmf_encode(const Dataset& ds) {
  std::vector<std::uint8_t> out(kMmfMagic, kMmfMagic + 4);
  put_le(out, static_cast<std::uint32_t>(ds.size()));
  for (const MultimodalSample& s : ds) {
    std::uint8_t mask = 0;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const Tensor& f = s.features[m];
      const std::size_t rows = f.rank() == 2 ? f.rows() : 0;
      const std::size_t cols = f.rank() == 2 ? f.cols() : 0;
      put_le(out, static_cast<std::uint32_t>(rows));
      put_le(out, static_cast<std::uint32_t>(cols));
      for (double v : f.data()) put_le(out, static_cast<float>(v));
      if (s.present[m]) mask |= static_cast<std::uint8_t>(1u << m);
    }
    put_le(out, mask);
    put_le(out, s.label);
  }
  return out;
}

Dataset mmf_decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMmfMagic, 4) != 0) throw FormatError("bad magic");
  for (int i = 0; i < 4; ++i) r.get<std::uint8_t>("magic");
  const std::uint32_t count = r.get<std::uint32_t>("sample count");
  Dataset ds;
  ds.reserve(std::min<std::size_t>(count, bytes.size() / 16 + 1));
  for (std::uint32_t n = 0; n < count; ++n) {
    MultimodalSample s;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const std::uint32_t T = r.get<std::uint32_t>("sequence length");
      const std::uint32_t d = r.get<std::uint32_t>("feature width");
      const std::size_t numel = static_cast<std::size_t>(T) * d;
      r.need(numel * 4, "feature block");
      std::vector<double> data(numel);
      for (double& v : data) v = static_cast<double>(r.get<float>("feature value"));
      s.features[m] = Tensor({T, d}, std::move(data));
    }
    const std::uint8_t mask = r.get<std::uint8_t>("mask");
    for (std::size_t m = 0; m < kNumModalities; ++m) s.present[m] = (mask >> m) & 1u;
    s.label = r.get<double>("label");
    ds.push_back(std::move(s));
  }
  if (r.pos() != bytes.size()) {
    throw FormatError("trailing bytes after sample " + std::to_string(count) + " at byte offset " +
                      std::to_string(r.pos()));
  }
  return ds;
}

void mmf_write(const Dataset& ds, const std::filesystem::path& path) {
  bytes::write_file(path, mmf_encode(ds));
}

Dataset mmf_read(const std::filesystem::path& path) { return mmf_decode(bytes::read_file(path)); }

// --- JSONL -----------------------------------------------------------------------

namespace {

using nlohmann::json;

Tensor parse_sequence(const json& j, const char* key, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": " + key;
  if (!j.is_array()) throw FormatError(where + " must be an array of rows");
  const std::size_t T = j.size();
  std::size_t d = 0;
  std::vector<double> data;
  for (std::size_t i = 0; i < T; ++i) {
    const json& row = j[i];
    if (!row.is_array()) throw FormatError(where + " row " + std::to_string(i) + " is not an array");
    if (i == 0) d = row.size();
    if (row.size() != d) {
      throw DimensionError(where + " row " + std::to_string(i) + " has " +
                           std::to_string(row.size()) + " values, expected " + std::to_string(d));
    }
    for (const json& v : row) {
      if (!v.is_number()) throw FormatError(where + " contains a non-numeric value");
      data.push_back(v.get<double>());
    }
  }
  return Tensor({T, d}, std::move(data));
}

}  // namespace

Dataset jsonl_parse(std::string_view text) {
  Dataset ds;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError("line " + std::to_string(line_no) + ": expected object");
    MultimodalSample s;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      const char* key = kModalityNames[m];
      if (!j.contains(key)) {
        throw FormatError("line " + std::to_string(line_no) + ": missing key \"" + key + "\"");
      }
      s.features[m] = parse_sequence(j.at(key), key, line_no);
    }
    if (!j.contains("label") || !j.at("label").is_number()) {
      throw FormatError("line " + std::to_string(line_no) + ": \"label\" must be a number");
    }
    s.label = j.at("label").get<double>();
    if (j.contains("mask")) {
      const json& mk = j.at("mask");
      if (!mk.is_array() || mk.size() != kNumModalities) {
        throw FormatError("line " + std::to_string(line_no) + ": \"mask\" must hold 3 entries");
      }
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        if (mk[m].is_boolean()) s.present[m] = mk[m].get<bool>();
        else if (mk[m].is_number_integer()) s.present[m] = mk[m].get<int>() != 0;
        else throw FormatError("line " + std::to_string(line_no) + ": bad mask entry");
      }
    }
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw DimensionError("line " + std::to_string(line_no) + ": " + e.what());
    }
    ds.push_back(std::move(s));
    if (end == text.size()) break;
  }
  return ds;
}

Dataset jsonl_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return jsonl_parse(buf.str());
}

void jsonl_write(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const MultimodalSample& s : ds) {
    json j;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      json rows = json::array();
      const Tensor& f = s.features[m];
      for (std::size_t i = 0; i < (f.rank() == 2 ? f.rows() : 0); ++i) {
        const auto r = f.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
      }
      j[kModalityNames[m]] = std::move(rows);
    }
    j["label"] = s.label;
    j["mask"] = {s.present[0], s.present[1], s.present[2]};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace xmf::data
