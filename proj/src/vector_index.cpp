#include "finrag/vector_index.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>

#include "finrag/error.hpp"

namespace finrag {

namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(Errc::CorruptIndex, "truncated index file");
  return to_little(v);
}

double norm_of(const float* v, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += static_cast<double>(v[i]) * static_cast<double>(v[i]);
  return std::sqrt(s);
}

}  // namespace

bool hit_before(const SimilarityHit& a, const SimilarityHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.ref_id < b.ref_id;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "cosine of unequal lengths");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  const double na = norm_of(a.data(), static_cast<int>(a.size()));
  const double nb = norm_of(b.data(), static_cast<int>(b.size()));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

VectorIndex::VectorIndex(int dim) : dim_(dim) {
  if (dim < 0) throw Error(Errc::InvalidArgument, "negative dimension");
}

VectorIndex::VectorIndex(const VectorIndex& other) {
  std::shared_lock lock(other.mu_);
  dim_ = other.dim_;
  rows_ = other.rows_;
  norms_ = other.norms_;
  ids_ = other.ids_;
  pos_ = other.pos_;
}

VectorIndex& VectorIndex::operator=(const VectorIndex& other) {
  if (this == &other) return *this;
  VectorIndex copy(other);
  std::unique_lock lock(mu_);
  dim_ = copy.dim_;
  rows_ = std::move(copy.rows_);
  norms_ = std::move(copy.norms_);
  ids_ = std::move(copy.ids_);
  pos_ = std::move(copy.pos_);
  return *this;
}

VectorIndex VectorIndex::build(const std::vector<std::pair<std::string, std::vector<float>>>& records) {
  VectorIndex idx(records.empty() ? 0 : static_cast<int>(records.front().second.size()));
  for (const auto& [id, v] : records) {
    if (static_cast<int>(v.size()) != idx.dim_) {
      throw Error(Errc::RaggedDimensions, id + " has dimension " + std::to_string(v.size()) + ", expected " +
                                              std::to_string(idx.dim_));
    }
    idx.add_locked(id, v);
  }
  return idx;
}

void VectorIndex::add(const std::string& ref_id, const std::vector<float>& vector) {
  std::unique_lock lock(mu_);
  add_locked(ref_id, vector);
}

void VectorIndex::add_locked(const std::string& ref_id, const std::vector<float>& vector) {
  if (dim_ == 0 && ids_.empty()) dim_ = static_cast<int>(vector.size());
  if (static_cast<int>(vector.size()) != dim_) {
    throw Error(Errc::DimensionMismatch, ref_id + " has dimension " + std::to_string(vector.size()) +
                                             ", index has " + std::to_string(dim_));
  }
  if (pos_.contains(ref_id)) throw Error(Errc::DuplicateId, ref_id);
  const double n = norm_of(vector.data(), dim_);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error(Errc::ZeroVector, ref_id);
  pos_[ref_id] = ids_.size();
  ids_.push_back(ref_id);
  norms_.push_back(n);
  rows_.insert(rows_.end(), vector.begin(), vector.end());
}

std::vector<SimilarityHit> VectorIndex::top_k(const std::vector<float>& query, int k,
                                              const std::unordered_set<std::string>& exclude) const {
  if (exclude.empty()) return scan(query, k, nullptr);
  return scan(query, k, [&](const std::string& id) { return !exclude.contains(id); });
}

std::vector<SimilarityHit> VectorIndex::top_k_if(const std::vector<float>& query, int k,
                                                 const std::function<bool(const std::string&)>& keep) const {
  return scan(query, k, keep);
}

std::vector<SimilarityHit> VectorIndex::scan(const std::vector<float>& query, int k,
                                             const std::function<bool(const std::string&)>& keep) const {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  std::shared_lock lock(mu_);
  if (ids_.empty()) return {};
  if (static_cast<int>(query.size()) != dim_) {
    throw Error(Errc::DimensionMismatch,
                "query has dimension " + std::to_string(query.size()) + ", index has " + std::to_string(dim_));
  }
  const double qn = norm_of(query.data(), dim_);
  if (!(qn > 0.0)) throw Error(Errc::ZeroVector, "query vector is zero");
  std::vector<SimilarityHit> hits;
  hits.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (keep && !keep(ids_[i])) continue;
    const float* row = rows_.data() + i * static_cast<std::size_t>(dim_);
    double dot = 0.0;
    for (int j = 0; j < dim_; ++j) dot += static_cast<double>(row[j]) * static_cast<double>(query[j]);
    hits.push_back({ids_[i], std::clamp(dot / (norms_[i] * qn), -1.0, 1.0)});
  }
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end(), hit_before);
  hits.resize(take);
  return hits;
}

void VectorIndex::remove(const std::vector<std::string>& ref_ids) {
  std::unique_lock lock(mu_);
  for (const auto& id : ref_ids) {
    if (!pos_.contains(id)) throw Error(Errc::UnknownId, id);
  }
  const auto d = static_cast<std::size_t>(dim_);
  for (const auto& id : ref_ids) {
    auto it = pos_.find(id);
    if (it == pos_.end()) continue;
    const std::size_t i = it->second;
    const std::size_t last = ids_.size() - 1;
    if (i != last) {
      std::copy_n(rows_.begin() + static_cast<std::ptrdiff_t>(last * d), d,
                  rows_.begin() + static_cast<std::ptrdiff_t>(i * d));
      norms_[i] = norms_[last];
      ids_[i] = ids_[last];
      pos_[ids_[i]] = i;
    }
    rows_.resize(last * d);
    norms_.pop_back();
    ids_.pop_back();
    pos_.erase(id);
  }
}

std::size_t VectorIndex::count() const {
  std::shared_lock lock(mu_);
  return ids_.size();
}

int VectorIndex::dim() const {
  std::shared_lock lock(mu_);
  return dim_;
}

bool VectorIndex::contains(const std::string& ref_id) const {
  std::shared_lock lock(mu_);
  return pos_.contains(ref_id);
}

std::vector<float> VectorIndex::vector(const std::string& ref_id) const {
  std::shared_lock lock(mu_);
  auto it = pos_.find(ref_id);
  if (it == pos_.end()) throw Error(Errc::UnknownId, ref_id);
  const auto begin = rows_.begin() + static_cast<std::ptrdiff_t>(it->second * static_cast<std::size_t>(dim_));
  return {begin, begin + dim_};
}

std::vector<std::string> VectorIndex::ids() const {
  std::shared_lock lock(mu_);
  return ids_;
}

void VectorIndex::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mu_);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::StorageError, "cannot write " + tmp);
    out.write("FRVI", 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    put<std::uint64_t>(out, ids_.size());
    for (float f : rows_) put<float>(out, f);
    for (double n : norms_) put<double>(out, n);
    for (const auto& id : ids_) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
      out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    if (!out) throw Error(Errc::StorageError, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FRVI", 4) != 0) throw Error(Errc::CorruptIndex, "bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw Error(Errc::CorruptIndex, "unsupported version");
  const auto d = get<std::uint32_t>(in);
  const auto n = get<std::uint64_t>(in);
  const auto file_size = std::filesystem::file_size(path);
  if (n * d * 4 + n * 12 > file_size) throw Error(Errc::CorruptIndex, "header counts exceed file size");
  VectorIndex idx(static_cast<int>(d));
  idx.rows_.resize(n * d);
  for (auto& f : idx.rows_) f = get<float>(in);
  idx.norms_.resize(n);
  for (auto& x : idx.norms_) x = get<double>(in);
  idx.ids_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len > file_size) throw Error(Errc::CorruptIndex, "id length exceeds file size");
    idx.ids_[i].resize(len);
    if (!in.read(idx.ids_[i].data(), len)) throw Error(Errc::CorruptIndex, "truncated id table");
    if (!idx.pos_.emplace(idx.ids_[i], i).second) throw Error(Errc::CorruptIndex, "duplicate id " + idx.ids_[i]);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(Errc::CorruptIndex, "trailing bytes");
  return idx;
}

}  // namespace finrag
