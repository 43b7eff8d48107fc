#include "langtail/io.hpp"

#include "langtail/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace langtail::io {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &v, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&v, bytes.data(), sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& origin) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw TruncationError(origin + ": unexpected end of data");
  }
  return byteswap_if_big(v);
}

void expect_header(std::istream& in, const char (&magic)[5], const std::string& origin) {
  char got[4];
  if (!in.read(got, 4)) throw TruncationError(origin + ": missing magic");
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(origin + ": bad magic, expected " + magic);
  }
  const auto version = get<std::uint32_t>(in, origin);
  if (version != kFormatVersion) {
    throw FormatError(origin + ": unsupported version " + std::to_string(version));
  }
}

void put_header(std::ostream& out, const char (&magic)[5]) {
  out.write(magic, 4);
  put<std::uint32_t>(out, kFormatVersion);
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.empty()) throw IoError("empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

/// Bulk element count guard: refuses sizes the remaining file cannot hold.
void check_payload(std::istream& in, std::uint64_t count, std::size_t elem, const std::string& origin) {
  const auto pos = in.tellg();
  if (pos < 0) return;
  in.seekg(0, std::ios::end);
  const auto end = in.tellg();
  in.seekg(pos);
  const auto remaining = static_cast<std::uint64_t>(end - pos);
  if (count > remaining / elem) {
    throw TruncationError(origin + ": payload of " + std::to_string(count) + " elements exceeds file size");
  }
}

}  // namespace

FeatureMatrix read_feature_matrix(std::istream& in, const std::string& origin) {
  expect_header(in, "LTFM", origin);
  const auto rows = get<std::uint64_t>(in, origin);
  const auto cols = get<std::uint64_t>(in, origin);
  if (rows == 0 || cols == 0) throw DataError(origin + ": zero-sized matrix");
  if (cols > std::numeric_limits<std::uint64_t>::max() / rows) throw FormatError(origin + ": dimension overflow");
  check_payload(in, rows * cols, sizeof(float), origin);
  FeatureMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::vector<float> buf(cols);
  for (std::uint64_t r = 0; r < rows; ++r) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(cols * sizeof(float)))) {
      throw TruncationError(origin + ": truncated payload at row " + std::to_string(r));
    }
    for (std::uint64_t c = 0; c < cols; ++c) {
      const float v = byteswap_if_big(buf[c]);
      if (!std::isfinite(v)) {
        throw DataError(origin + ": non-finite value at (" + std::to_string(r) + ", " + std::to_string(c) + ")");
      }
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = static_cast<double>(v);
    }
  }
  return m;
}

void write_feature_matrix(std::ostream& out, const FeatureMatrix& m) {
  put_header(out, "LTFM");
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  std::vector<float> buf(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      buf[static_cast<std::size_t>(c)] = byteswap_if_big(static_cast<float>(m(r, c)));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

FeatureMatrix read_feature_matrix(const fs::path& path) {
  auto in = open_in(path);
  return read_feature_matrix(in, path.string());
}

void write_feature_matrix(const fs::path& path, const FeatureMatrix& m) {
  check_feature_matrix(m, "write_feature_matrix");
  auto out = open_out(path);
  write_feature_matrix(out, m);
  finish(out, path);
}

SuperpointPartition read_superpoints(const fs::path& path, std::vector<std::uint32_t>* original_ids) {
  auto in = open_in(path);
  const auto origin = path.string();
  expect_header(in, "LTSP", origin);
  const auto n = get<std::uint64_t>(in, origin);
  check_payload(in, n, sizeof(std::uint32_t), origin);
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) id = get<std::uint32_t>(in, origin);
  return SuperpointPartition::densify(ids, original_ids);
}

void write_superpoints(const fs::path& path, const SuperpointPartition& part) {
  auto out = open_out(path);
  put_header(out, "LTSP");
  put<std::uint64_t>(out, part.n_points());
  for (auto id : part.assignment()) put<std::uint32_t>(out, id);
  finish(out, path);
}

LabelVector read_labels(const fs::path& path) {
  auto in = open_in(path);
  const auto origin = path.string();
  expect_header(in, "LTLB", origin);
  const auto n = get<std::uint64_t>(in, origin);
  check_payload(in, n, sizeof(std::int32_t), origin);
  LabelVector labels;
  labels.labels.resize(n);
  for (auto& l : labels.labels) l = get<std::int32_t>(in, origin);
  labels.validate();
  return labels;
}

void write_labels(const fs::path& path, const LabelVector& labels) {
  labels.validate();
  auto out = open_out(path);
  put_header(out, "LTLB");
  put<std::uint64_t>(out, labels.size());
  for (auto l : labels.labels) put<std::int32_t>(out, l);
  finish(out, path);
}

SceneMasks read_scene_masks(const fs::path& path) {
  auto in = open_in(path);
  const auto origin = path.string();
  const auto version = get<std::uint32_t>(in, origin);
  if (version != kFormatVersion) throw FormatError(origin + ": unsupported mask version " + std::to_string(version));
  const auto n = get<std::uint64_t>(in, origin);
  check_payload(in, n, 2 * sizeof(std::uint64_t), origin);
  SceneMasks masks;
  masks.reserve(n);
  for (std::uint64_t e = 0; e < n; ++e) {
    const auto id = get<std::uint64_t>(in, origin);
    const auto count = get<std::uint64_t>(in, origin);
    check_payload(in, count, sizeof(std::uint64_t), origin);
    std::vector<std::uint64_t> pts(count);
    for (auto& p : pts) p = get<std::uint64_t>(in, origin);
    masks.emplace_back(id, std::move(pts));
  }
  return masks;
}

void write_scene_masks(const fs::path& path, const SceneMasks& masks) {
  auto out = open_out(path);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint64_t>(out, masks.size());
  for (const auto& [id, pts] : masks) {
    put<std::uint64_t>(out, id);
    put<std::uint64_t>(out, pts.size());
    for (auto p : pts) put<std::uint64_t>(out, p);
  }
  finish(out, path);
}

std::string read_text_file(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& contents) {
  auto out = open_out(path);
  out << contents;
  finish(out, path);
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, sep)) parts.push_back(cur);
  if (!line.empty() && line.back() == sep) parts.emplace_back();
  return parts;
}

}  // namespace

std::vector<EntityRecord> read_entity_bank(const fs::path& dir, const std::map<std::string, std::size_t>& scene_sizes) {
  const auto tsv = read_text_file(dir / "entities.tsv");
  std::vector<EntityRecord> entities;
  std::unordered_map<std::uint64_t, std::size_t> index_of;
  std::istringstream lines(tsv);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto parts = split(line, '\t');
    if (parts.size() != 3) {
      throw FormatError("entities.tsv line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    EntityRecord rec;
    try {
      rec.entity_id = std::stoull(parts[0]);
    } catch (const std::exception&) {
      throw FormatError("entities.tsv line " + std::to_string(lineno) + ": bad entity id");
    }
    rec.text = parts[1];
    if (!index_of.emplace(rec.entity_id, entities.size()).second) {
      throw DataError("entities.tsv: duplicate entity id " + parts[0]);
    }
    entities.push_back(std::move(rec));
  }
  if (entities.empty()) throw DataError(dir.string() + ": entity bank is empty");

  const auto emb = read_feature_matrix(dir / "embeddings.ltfm");
  if (static_cast<std::size_t>(emb.rows()) != entities.size()) {
    throw ShapeError("embeddings.ltfm has " + std::to_string(emb.rows()) + " rows for " +
                     std::to_string(entities.size()) + " entities");
  }
  for (std::size_t t = 0; t < entities.size(); ++t) {
    entities[t].text_embedding = emb.row(static_cast<Eigen::Index>(t)).transpose();
    if (!(entities[t].text_embedding.norm() > 0.0)) {
      throw DataError("entity " + std::to_string(entities[t].entity_id) + " has a zero text embedding");
    }
  }

  const auto mask_dir = dir / "masks";
  if (fs::exists(mask_dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(mask_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto scene_id = f.stem().string();
      const auto sz = scene_sizes.find(scene_id);
      if (!scene_sizes.empty() && sz == scene_sizes.end()) continue;
      for (auto& [id, pts] : read_scene_masks(f)) {
        const auto it = index_of.find(id);
        if (it == index_of.end()) {
          throw DataError(f.string() + ": mask for unknown entity " + std::to_string(id));
        }
        canonicalize_mask(pts);
        if (pts.empty()) throw DataError(f.string() + ": empty mask for entity " + std::to_string(id));
        if (sz != scene_sizes.end() && pts.back() >= sz->second) {
          throw DataError(f.string() + ": mask index out of range for entity " + std::to_string(id));
        }
        entities[it->second].masks.push_back({scene_id, std::move(pts)});
      }
    }
  }
  return entities;
}

void write_entity_bank(const fs::path& dir, const std::vector<EntityRecord>& entities) {
  if (entities.empty()) throw DataError("write_entity_bank: no entities");
  fs::create_directories(dir / "masks");
  std::ostringstream tsv;
  std::map<std::string, SceneMasks> per_scene;
  const auto dim = entities.front().text_embedding.size();
  FeatureMatrix emb(static_cast<Eigen::Index>(entities.size()), dim);
  for (std::size_t t = 0; t < entities.size(); ++t) {
    const auto& e = entities[t];
    if (e.text.find_first_of("\t\n") != std::string::npos) {
      throw DataError("entity text must not contain tabs or newlines");
    }
    if (e.text_embedding.size() != dim) throw ShapeError("entity embeddings have inconsistent dimension");
    std::vector<std::string> scenes;
    for (const auto& m : e.masks) scenes.push_back(m.scene_id);
    std::sort(scenes.begin(), scenes.end());
    scenes.erase(std::unique(scenes.begin(), scenes.end()), scenes.end());
    tsv << e.entity_id << '\t' << e.text << '\t' << scenes.size() << '\n';
    emb.row(static_cast<Eigen::Index>(t)) = e.text_embedding.transpose();
    for (const auto& m : e.masks) {
      auto pts = m.points;
      canonicalize_mask(pts);
      per_scene[m.scene_id].emplace_back(e.entity_id, std::move(pts));
    }
  }
  write_text_file(dir / "entities.tsv", tsv.str());
  write_feature_matrix(dir / "embeddings.ltfm", emb);
  for (const auto& [scene, masks] : per_scene) {
    write_scene_masks(dir / "masks" / (scene + ".bin"), masks);
  }
}

}  // namespace langtail::io
