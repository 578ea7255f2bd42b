#pragma once

// Predicates over a fixed-width packet header, represented as reduced ordered
// binary decision diagrams with a shared, hash-consed node store.
//
// Variable order is fixed: fields in declaration order, most-significant bit
// first within each field. Header bit i is BDD variable i.

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "apc/error.hpp"

namespace apc {

using BigInt = boost::multiprecision::cpp_int;

struct Field {
  std::string name;
  unsigned width = 0;

  bool operator==(const Field&) const = default;
};

class HeaderLayout {
 public:
  static constexpr unsigned kMaxFieldWidth = 64;

  HeaderLayout() = default;

  explicit HeaderLayout(std::vector<Field> fields) : fields_(std::move(fields)) {
    if (fields_.empty()) throw Error(Errc::InvalidLayout, "layout has no fields");
    std::unordered_set<std::string> seen;
    unsigned offset = 0;
    for (const auto& f : fields_) {
      if (f.width == 0) throw Error(Errc::InvalidLayout, "field '" + f.name + "' has zero width");
      if (f.width > kMaxFieldWidth)
        throw Error(Errc::InvalidLayout, "field '" + f.name + "' wider than 64 bits");
      if (!seen.insert(f.name).second)
        throw Error(Errc::InvalidLayout, "duplicate field name '" + f.name + "'");
      offsets_.push_back(offset);
      offset += f.width;
    }
    total_width_ = offset;
  }

  /// src 32, dst 32, proto 8, sport 16, dport 16.
  static HeaderLayout five_tuple() {
    return HeaderLayout({{"src", 32}, {"dst", 32}, {"proto", 8}, {"sport", 16}, {"dport", 16}});
  }

  const std::vector<Field>& fields() const noexcept { return fields_; }
  unsigned total_width() const noexcept { return total_width_; }
  bool empty() const noexcept { return fields_.empty(); }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < fields_.size(); ++i)
      if (fields_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw Error(Errc::UnknownField, "no field named '" + std::string(name) + "'");
  }

  /// Bit index of the field's most significant bit.
  unsigned offset(std::size_t field) const { return offsets_.at(field); }
  unsigned width(std::size_t field) const { return fields_.at(field).width; }

  bool operator==(const HeaderLayout& o) const { return fields_ == o.fields_; }

 private:
  std::vector<Field> fields_;
  std::vector<unsigned> offsets_;
  unsigned total_width_ = 0;
};

/// A concrete packet header: `width` bits, bit 0 is the MSB of the first field.
class Header {
 public:
  Header() = default;
  explicit Header(unsigned width) : width_(width), words_((width + 63) / 64, 0) {}
  explicit Header(const HeaderLayout& layout) : Header(layout.total_width()) {}

  /// The low `width` bits of `value`, most significant first. Requires width <= 64.
  static Header from_uint(unsigned width, std::uint64_t value) {
    Header h(width);
    h.set_bits(0, width, value);
    return h;
  }

  unsigned width() const noexcept { return width_; }

  bool bit(unsigned i) const noexcept {
    return (words_[i >> 6] >> (63 - (i & 63))) & 1u;
  }

  void set_bit(unsigned i, bool v) noexcept {
    const std::uint64_t mask = std::uint64_t{1} << (63 - (i & 63));
    if (v)
      words_[i >> 6] |= mask;
    else
      words_[i >> 6] &= ~mask;
  }

  std::uint64_t bits(unsigned offset, unsigned count) const noexcept {
    std::uint64_t v = 0;
    for (unsigned i = 0; i < count; ++i) v = (v << 1) | static_cast<std::uint64_t>(bit(offset + i));
    return v;
  }

  void set_bits(unsigned offset, unsigned count, std::uint64_t value) noexcept {
    for (unsigned i = 0; i < count; ++i) set_bit(offset + i, (value >> (count - 1 - i)) & 1u);
  }

  std::uint64_t field(const HeaderLayout& layout, std::size_t f) const {
    return bits(layout.offset(f), layout.width(f));
  }

  void set_field(const HeaderLayout& layout, std::size_t f, std::uint64_t value) {
    set_bits(layout.offset(f), layout.width(f), value);
  }

  std::span<const std::uint64_t> words() const noexcept { return words_; }

  std::string to_string() const {
    std::string s;
    s.reserve(width_);
    for (unsigned i = 0; i < width_; ++i) s.push_back(bit(i) ? '1' : '0');
    return s;
  }

  bool operator==(const Header&) const = default;

 private:
  unsigned width_ = 0;
  std::vector<std::uint64_t> words_;
};

struct HeaderHash {
  std::size_t operator()(const Header& h) const noexcept {
    std::size_t seed = h.width();
    for (auto w : h.words()) seed ^= std::hash<std::uint64_t>{}(w) + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2);
    return seed;
  }
};

// Field constraints: the building blocks of rule and ACL matches.
struct Exact {
  std::uint64_t value = 0;
};
struct Prefix {
  std::uint64_t value = 0;  // full-width value; only the top `length` bits matter
  unsigned length = 0;
};
struct Range {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
};

struct FieldConstraint {
  std::string field;
  std::variant<Exact, Prefix, Range> match;

  static FieldConstraint exact(std::string f, std::uint64_t v) { return {std::move(f), Exact{v}}; }
  static FieldConstraint prefix(std::string f, std::uint64_t v, unsigned len) {
    return {std::move(f), Prefix{v, len}};
  }
  static FieldConstraint range(std::string f, std::uint64_t lo, std::uint64_t hi) {
    return {std::move(f), Range{lo, hi}};
  }
};

inline std::uint64_t field_max(unsigned width) noexcept {
  return width >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << width) - 1;
}

/// Throws UnknownField / ValueOutOfRange when `c` does not fit `layout`.
inline void validate_constraint(const HeaderLayout& layout, const FieldConstraint& c) {
  const auto width = layout.width(layout.index_of(c.field));
  const auto max = field_max(width);
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Exact>) {
          if (m.value > max) throw Error(Errc::ValueOutOfRange, "exact value exceeds width of '" + c.field + "'");
        } else if constexpr (std::is_same_v<T, Prefix>) {
          if (m.value > max) throw Error(Errc::ValueOutOfRange, "prefix value exceeds width of '" + c.field + "'");
          if (m.length > width) throw Error(Errc::ValueOutOfRange, "prefix length exceeds width of '" + c.field + "'");
        } else {
          if (m.hi > max) throw Error(Errc::ValueOutOfRange, "range bound exceeds width of '" + c.field + "'");
          if (m.lo > m.hi) throw Error(Errc::ValueOutOfRange, "range lo > hi on '" + c.field + "'");
        }
      },
      c.match);
}

/// Maximal aligned prefixes covering [lo, hi] in a `width`-bit space.
inline std::vector<Prefix> range_to_prefixes(std::uint64_t lo, std::uint64_t hi, unsigned width) {
  std::vector<Prefix> out;
  if (lo > hi) return out;
  // Work in 128-bit so that hi + 1 cannot overflow at width 64.
  using U = unsigned __int128;
  U cur = lo;
  const U end = static_cast<U>(hi) + 1;
  while (cur < end) {
    unsigned span = 0;  // block size 2^span
    while (span < width) {
      const U size = U{1} << (span + 1);
      if ((cur & (size - 1)) != 0 || cur + size > end) break;
      ++span;
    }
    out.push_back(Prefix{static_cast<std::uint64_t>(cur), width - span});
    cur += U{1} << span;
  }
  return out;
}

/// Handle into an `Engine`'s node store. Equal handles denote equal functions.
struct Predicate {
  std::uint32_t node = 0;
  std::uint32_t engine = 0;

  bool is_false() const noexcept { return node == 0; }
  bool is_true() const noexcept { return node == 1; }
  bool is_constant() const noexcept { return node < 2; }

  bool operator==(const Predicate&) const = default;
};

struct PredicateHash {
  std::size_t operator()(const Predicate& p) const noexcept {
    return std::hash<std::uint64_t>{}((std::uint64_t{p.engine} << 32) | p.node);
  }
};

enum class Op { And, Or, Not, Diff };

struct PredicateInfo {
  bool is_false = false;
  bool is_true = false;
  BigInt sat_count;
  std::size_t node_count = 0;  // decision nodes reachable from the root, terminals excluded
};

/// Shared node store plus the operations that build predicates in it.
///
/// Construction (match, combine, exists) needs exclusive access. eval, query
/// and witness only read nodes reachable from already-built handles and may
/// run concurrently with each other and with a single constructing thread:
/// nodes live in fixed-size chunks that are never moved, and the store only
/// grows.
class Engine {
 public:
  explicit Engine(HeaderLayout layout)
      : layout_(std::move(layout)), id_(next_engine_id()),
        chunks_(std::make_unique<std::atomic<Node*>[]>(kMaxChunks)) {
    if (layout_.empty()) throw Error(Errc::InvalidLayout, "layout has no fields");
    for (std::size_t i = 0; i < kMaxChunks; ++i) chunks_[i].store(nullptr, std::memory_order_relaxed);
    const auto terminal = static_cast<std::uint32_t>(layout_.total_width());
    append({terminal, 0, 0});  // false
    append({terminal, 1, 1});  // true
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const HeaderLayout& layout() const noexcept { return layout_; }
  std::uint32_t id() const noexcept { return id_; }
  std::size_t node_count() const noexcept { return size_.load(std::memory_order_acquire); }
  std::size_t memory_bytes() const noexcept { return owned_.size() * kChunkSize * sizeof(Node); }

  Predicate bottom() const noexcept { return {0, id_}; }
  Predicate top() const noexcept { return {1, id_}; }
  Predicate constant(bool v) const noexcept { return v ? top() : bottom(); }

  // --- construction -------------------------------------------------------

  Predicate match(const FieldConstraint& c) {
    validate_constraint(layout_, c);
    const auto f = layout_.index_of(c.field);
    const unsigned off = layout_.offset(f);
    const unsigned width = layout_.width(f);
    return std::visit(
        [&](const auto& m) -> Predicate {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, Exact>) {
            return {cube(off, width, m.value, width), id_};
          } else if constexpr (std::is_same_v<T, Prefix>) {
            return {cube(off, width, m.value, m.length), id_};
          } else {
            std::uint32_t acc = 0;
            for (const auto& p : range_to_prefixes(m.lo, m.hi, width))
              acc = apply(Op::Or, acc, cube(off, width, p.value, p.length));
            return {acc, id_};
          }
        },
        c.match);
  }

  /// Conjunction of constraints; the empty list is `top()`.
  Predicate match_all(std::span<const FieldConstraint> cs) {
    std::uint32_t acc = 1;
    for (const auto& c : cs) acc = apply(Op::And, acc, match(c).node);
    return {acc, id_};
  }

  Predicate combine(Op op, Predicate a, std::optional<Predicate> b = std::nullopt) {
    check(a);
    if (op == Op::Not) {
      if (b) throw Error(Errc::PreconditionViolation, "NOT takes one operand");
      return {negate(a.node), id_};
    }
    if (!b) throw Error(Errc::PreconditionViolation, "binary operator needs two operands");
    check(*b);
    return {apply(op, a.node, b->node), id_};
  }

  Predicate conj(Predicate a, Predicate b) { return combine(Op::And, a, b); }
  Predicate disj(Predicate a, Predicate b) { return combine(Op::Or, a, b); }
  Predicate neg(Predicate a) { return combine(Op::Not, a); }
  Predicate diff(Predicate a, Predicate b) { return combine(Op::Diff, a, b); }

  /// True on h iff some assignment of the named fields' bits satisfies p.
  Predicate exists(Predicate p, std::span<const std::string> fields) {
    check(p);
    std::vector<bool> quantified(layout_.total_width() + 1, false);
    for (const auto& name : fields) {
      const auto f = layout_.index_of(name);
      for (unsigned i = 0; i < layout_.width(f); ++i) quantified[layout_.offset(f) + i] = true;
    }
    std::unordered_map<std::uint32_t, std::uint32_t> memo;
    return {exists_rec(p.node, quantified, memo), id_};
  }

  /// a implies b.
  /// a AND b is satisfiable; decided without building the conjunction.
  bool intersects(Predicate a, Predicate b) {
    check(a);
    check(b);
    return meet(a.node, b.node);
  }

  bool implies(Predicate a, Predicate b) { return diff(a, b).is_false(); }

  // --- read-only ------------------------------------------------------------

  bool eval(Predicate p, const Header& h) const {
    check(p);
    if (h.width() != layout_.total_width())
      throw Error(Errc::LengthMismatch, "header has " + std::to_string(h.width()) + " bits, layout has " +
                                            std::to_string(layout_.total_width()));
    return eval_unchecked(p.node, h);
  }

  /// eval without the handle/width checks; the hot path of classification.
  bool eval_unchecked(std::uint32_t n, const Header& h) const noexcept {
    while (n > 1) {
      const Node& nd = node(n);
      n = h.bit(nd.var) ? nd.hi : nd.lo;
    }
    return n == 1;
  }

  PredicateInfo query(Predicate p) const {
    check(p);
    PredicateInfo info;
    info.is_false = p.is_false();
    info.is_true = p.is_true();
    std::unordered_map<std::uint32_t, BigInt> memo;
    info.sat_count = count_rec(p.node, memo) << var_of(p.node);
    std::unordered_set<std::uint32_t> seen;
    std::vector<std::uint32_t> stack{p.node};
    while (!stack.empty()) {
      const auto n = stack.back();
      stack.pop_back();
      if (n < 2 || !seen.insert(n).second) continue;
      stack.push_back(node(n).lo);
      stack.push_back(node(n).hi);
    }
    info.node_count = seen.size();
    return info;
  }

  /// Some header satisfying p (unconstrained bits are 0), or nullopt if p is false.
  std::optional<Header> witness(Predicate p) const {
    check(p);
    if (p.is_false()) return std::nullopt;
    Header h(layout_.total_width());
    auto n = p.node;
    while (n > 1) {
      const Node& nd = node(n);
      if (nd.lo != 0) {
        n = nd.lo;
      } else {
        h.set_bit(nd.var, true);
        n = nd.hi;
      }
    }
    return h;
  }

  void check(Predicate p) const {
    if (p.engine != id_) throw Error(Errc::EngineMismatch, "predicate belongs to another engine");
    if (p.node >= size_.load(std::memory_order_acquire))
      throw Error(Errc::InvalidHandle, "handle " + std::to_string(p.node) + " out of range");
  }

 private:
  struct Node {
    std::uint32_t var;
    std::uint32_t lo;
    std::uint32_t hi;
  };

  static constexpr std::uint32_t kChunkBits = 16;
  static constexpr std::size_t kChunkSize = std::size_t{1} << kChunkBits;
  static constexpr std::size_t kMaxChunks = std::size_t{1} << 16;
  static constexpr Op kMeet = static_cast<Op>(4);  // cache tag for intersects()
  static constexpr std::size_t kMinCache = std::size_t{1} << 12;
  static constexpr std::size_t kMaxCache = std::size_t{1} << 22;

  static std::uint32_t next_engine_id() {
    static std::atomic<std::uint32_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  const Node& node(std::uint32_t i) const noexcept {
    return chunks_[i >> kChunkBits].load(std::memory_order_acquire)[i & (kChunkSize - 1)];
  }

  std::uint32_t var_of(std::uint32_t i) const noexcept { return node(i).var; }

  std::uint32_t append(Node n) {
    const auto i = size_.load(std::memory_order_relaxed);
    const std::size_t chunk = i >> kChunkBits;
    if (chunk >= kMaxChunks) throw Error(Errc::PreconditionViolation, "node store exhausted");
    if (chunks_[chunk].load(std::memory_order_relaxed) == nullptr) {
      owned_.push_back(std::make_unique<Node[]>(kChunkSize));
      chunks_[chunk].store(owned_.back().get(), std::memory_order_release);
    }
    owned_[chunk][i & (kChunkSize - 1)] = n;
    size_.store(i + 1, std::memory_order_release);
    return i;
  }

  static std::uint64_t mix(std::uint64_t x) noexcept {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    return x;
  }

  static std::uint64_t node_hash(std::uint32_t var, std::uint32_t lo, std::uint32_t hi) noexcept {
    return mix((std::uint64_t{lo} << 32 | hi) * 0x9e3779b97f4a7c15ull + var);
  }

  // Open-addressing unique table of node indices; 0 marks an empty slot
  // (the false terminal is never stored).
  std::uint32_t mk(std::uint32_t var, std::uint32_t lo, std::uint32_t hi) {
    if (lo == hi) return lo;
    if ((unique_count_ + 1) * 2 > unique_.size()) grow_unique();
    const std::size_t mask = unique_.size() - 1;
    for (std::size_t i = node_hash(var, lo, hi) & mask;; i = (i + 1) & mask) {
      const auto slot = unique_[i];
      if (slot == 0) {
        const auto n = append({var, lo, hi});
        unique_[i] = n;
        ++unique_count_;
        if (n >= cache_.size() && cache_.size() < kMaxCache) cache_.assign(cache_.size() * 2, CacheEntry{});
        return n;
      }
      const Node& nd = node(slot);
      if (nd.var == var && nd.lo == lo && nd.hi == hi) return slot;
    }
  }

  void grow_unique() {
    std::vector<std::uint32_t> next(std::max<std::size_t>(unique_.size() * 2, 1024), 0);
    const std::size_t mask = next.size() - 1;
    for (auto n : unique_) {
      if (n == 0) continue;
      const Node& nd = node(n);
      std::size_t i = node_hash(nd.var, nd.lo, nd.hi) & mask;
      while (next[i] != 0) i = (i + 1) & mask;
      next[i] = n;
    }
    unique_.swap(next);
  }

  // Lossy direct-mapped memo shared by all operations.
  struct CacheEntry {
    std::uint32_t a = 0, b = 0, r = 0;
    std::uint32_t op = 0;  // Op + 1; 0 marks an empty entry
  };

  CacheEntry& cache_slot(Op op, std::uint32_t a, std::uint32_t b) noexcept {
    const auto h = mix((std::uint64_t{a} << 32 | b) + static_cast<std::uint64_t>(op) * 0x9e3779b97f4a7c15ull);
    return cache_[h & (cache_.size() - 1)];
  }

  static bool cache_hit(const CacheEntry& e, Op op, std::uint32_t a, std::uint32_t b) noexcept {
    return e.op == static_cast<std::uint32_t>(op) + 1 && e.a == a && e.b == b;
  }

  // Conjunction of the top `length` bits of `value` within one field.
  std::uint32_t cube(unsigned off, unsigned width, std::uint64_t value, unsigned length) {
    std::uint32_t n = 1;
    for (unsigned k = length; k-- > 0;) {
      const bool b = (value >> (width - 1 - k)) & 1u;
      n = b ? mk(off + k, 0, n) : mk(off + k, n, 0);
    }
    return n;
  }

  std::uint32_t negate(std::uint32_t a) {
    if (a < 2) return a ^ 1u;
    if (const auto& e = cache_slot(Op::Not, a, 0); cache_hit(e, Op::Not, a, 0)) return e.r;
    const Node nd = node(a);
    const auto r = mk(nd.var, negate(nd.lo), negate(nd.hi));
    cache_slot(Op::Not, a, 0) = {a, 0, r, static_cast<std::uint32_t>(Op::Not) + 1};
    return r;
  }

  std::uint32_t apply(Op op, std::uint32_t a, std::uint32_t b) {
    switch (op) {
      case Op::And:
        if (a == 0 || b == 0) return 0;
        if (a == 1) return b;
        if (b == 1 || a == b) return a;
        if (a > b) std::swap(a, b);
        break;
      case Op::Or:
        if (a == 1 || b == 1) return 1;
        if (a == 0) return b;
        if (b == 0 || a == b) return a;
        if (a > b) std::swap(a, b);
        break;
      case Op::Diff:
        if (a == 0 || b == 1 || a == b) return 0;
        if (b == 0) return a;
        if (a == 1) return negate(b);
        break;
      case Op::Not:
        return negate(a);
    }
    if (const auto& e = cache_slot(op, a, b); cache_hit(e, op, a, b)) return e.r;
    const Node na = node(a);
    const Node nb = node(b);
    const auto v = std::min(na.var, nb.var);
    const auto a_lo = na.var == v ? na.lo : a, a_hi = na.var == v ? na.hi : a;
    const auto b_lo = nb.var == v ? nb.lo : b, b_hi = nb.var == v ? nb.hi : b;
    const auto lo = apply(op, a_lo, b_lo);
    const auto hi = apply(op, a_hi, b_hi);
    const auto r = mk(v, lo, hi);
    cache_slot(op, a, b) = {a, b, r, static_cast<std::uint32_t>(op) + 1};
    return r;
  }

  // Result of And(a, b) != 0, memoized under a pseudo-op in the same cache.
  bool meet(std::uint32_t a, std::uint32_t b) {
    if (a == 0 || b == 0) return false;
    if (a == 1 || b == 1 || a == b) return true;
    if (a > b) std::swap(a, b);
    if (const auto& e = cache_slot(Op::And, a, b); cache_hit(e, Op::And, a, b)) return e.r != 0;
    if (const auto& e = cache_slot(kMeet, a, b); cache_hit(e, kMeet, a, b)) return e.r != 0;
    const Node na = node(a);
    const Node nb = node(b);
    const auto v = std::min(na.var, nb.var);
    const bool r = meet(na.var == v ? na.lo : a, nb.var == v ? nb.lo : b) ||
                   meet(na.var == v ? na.hi : a, nb.var == v ? nb.hi : b);
    cache_slot(kMeet, a, b) = {a, b, r, static_cast<std::uint32_t>(kMeet) + 1};
    return r;
  }

  std::uint32_t exists_rec(std::uint32_t n, const std::vector<bool>& quantified,
                           std::unordered_map<std::uint32_t, std::uint32_t>& memo) {
    if (n < 2) return n;
    if (auto it = memo.find(n); it != memo.end()) return it->second;
    const Node nd = node(n);
    const auto lo = exists_rec(nd.lo, quantified, memo);
    const auto hi = exists_rec(nd.hi, quantified, memo);
    const auto r = quantified[nd.var] ? apply(Op::Or, lo, hi) : mk(nd.var, lo, hi);
    memo.emplace(n, r);
    return r;
  }

  // Satisfying assignments of variables var(n) .. total_width-1.
  BigInt count_rec(std::uint32_t n, std::unordered_map<std::uint32_t, BigInt>& memo) const {
    if (n == 0) return 0;
    if (n == 1) return 1;
    if (auto it = memo.find(n); it != memo.end()) return it->second;
    const Node nd = node(n);
    BigInt r = (count_rec(nd.lo, memo) << (var_of(nd.lo) - nd.var - 1)) +
               (count_rec(nd.hi, memo) << (var_of(nd.hi) - nd.var - 1));
    memo.emplace(n, r);
    return r;
  }

  HeaderLayout layout_;
  std::uint32_t id_;
  std::unique_ptr<std::atomic<Node*>[]> chunks_;
  std::vector<std::unique_ptr<Node[]>> owned_;
  std::atomic<std::uint32_t> size_{0};
  std::vector<std::uint32_t> unique_;
  std::size_t unique_count_ = 0;
  std::vector<CacheEntry> cache_ = std::vector<CacheEntry>(kMinCache);
};

}  // namespace apc
