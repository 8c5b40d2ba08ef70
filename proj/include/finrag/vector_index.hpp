#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace finrag {

struct SimilarityHit {
  std::string ref_id;
  /// Cosine similarity in [-1, 1].
  double score = 0.0;
  friend bool operator==(const SimilarityHit&, const SimilarityHit&) = default;
};

/// Score descending, then ref_id ascending.
bool hit_before(const SimilarityHit& a, const SimilarityHit& b);

/// Exact cosine-similarity store. Readers may call top_k concurrently;
/// add/remove take an exclusive lock.
///
/// File layout (little-endian): "FRVI", u32 version, u32 d, u64 n, n*d f32
/// rows, n f64 norms, then n ids as u32 byte length + UTF-8 bytes.
class VectorIndex {
 public:
  static constexpr std::uint32_t kVersion = 1;

  VectorIndex() = default;
  explicit VectorIndex(int dim);
  VectorIndex(const VectorIndex& other);
  VectorIndex& operator=(const VectorIndex& other);

  /// Throws DuplicateId, ZeroVector or RaggedDimensions.
  static VectorIndex build(const std::vector<std::pair<std::string, std::vector<float>>>& records);

  void add(const std::string& ref_id, const std::vector<float>& vector);

  /// The k best non-excluded records. Throws InvalidArgument for k < 1 and
  /// DimensionMismatch for a wrong-sized query.
  std::vector<SimilarityHit> top_k(const std::vector<float>& query, int k,
                                   const std::unordered_set<std::string>& exclude = {}) const;
  /// As top_k, over records for which `keep(ref_id)` holds.
  std::vector<SimilarityHit> top_k_if(const std::vector<float>& query, int k,
                                      const std::function<bool(const std::string&)>& keep) const;

  /// All-or-nothing: throws UnknownId before removing anything.
  void remove(const std::vector<std::string>& ref_ids);

  std::size_t count() const;
  int dim() const;
  bool contains(const std::string& ref_id) const;
  std::vector<float> vector(const std::string& ref_id) const;
  std::vector<std::string> ids() const;

  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

 private:
  void add_locked(const std::string& ref_id, const std::vector<float>& vector);
  std::vector<SimilarityHit> scan(const std::vector<float>& query, int k,
                                  const std::function<bool(const std::string&)>& keep) const;

  int dim_ = 0;
  std::vector<float> rows_;
  std::vector<double> norms_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> pos_;
  mutable std::shared_mutex mu_;
};

/// Cosine similarity computed in double; 0 when either vector is zero.
double cosine(const std::vector<float>& a, const std::vector<float>& b);

}  // namespace finrag
