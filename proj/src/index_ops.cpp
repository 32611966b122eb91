#include "krn/index_ops.hpp"

#include <sstream>

namespace krn {

namespace {

void gather_counters(const Index& e, std::set<std::string>& out) {
  if (const auto* c = e.get<Counter>()) {
    out.insert(c->name);
  } else if (const auto* b = e.get<IndexBinary>()) {
    gather_counters(b->lhs, out);
    gather_counters(b->rhs, out);
  } else if (const auto* a = e.get<ViewAccess>()) {
    for (const Index& i : a->indices) gather_counters(i, out);
  }
}

void add_scaled(AffineForm& acc, const AffineForm& f, std::int64_t scale) {
  acc.constant += scale * f.constant;
  for (const auto& [k, c] : f.terms) {
    std::int64_t& slot = acc.terms[k];
    slot += scale * c;
    if (slot == 0) acc.terms.erase(k);
  }
}

bool is_constant(const AffineForm& f) { return f.terms.empty(); }

}  // namespace

std::set<std::string> free_counters(const Index& e) {
  std::set<std::string> out;
  gather_counters(e, out);
  return out;
}

std::string canonical_key(const AffineForm& f) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, c] : f.terms) {
    if (!first) os << " + ";
    first = false;
    if (c != 1) os << c << "*";
    os << k;
  }
  if (first || f.constant != 0) {
    if (!first) os << " + ";
    os << f.constant;
  }
  return os.str();
}

AffineForm normalize(const Index& e) {
  AffineForm out;
  if (const auto* c = e.get<Counter>()) {
    out.terms[c->name] = 1;
  } else if (const auto* l = e.get<IntLiteral>()) {
    out.constant = l->value;
  } else if (const auto* x = e.get<Extent>()) {
    out.terms["extent(" + x->view + "," + std::to_string(x->dim) + ")"] = 1;
  } else if (const auto* a = e.get<ViewAccess>()) {
    std::string key = a->view + "(";
    for (std::size_t i = 0; i < a->indices.size(); ++i)
      key += (i ? "," : "") + canonical_key(normalize(a->indices[i]));
    key += ")";
    out.terms[key] = 1;
  } else if (const auto* b = e.get<IndexBinary>()) {
    AffineForm lhs = normalize(b->lhs);
    AffineForm rhs = normalize(b->rhs);
    switch (b->op) {
      case IndexOp::Add:
        add_scaled(out, lhs, 1);
        add_scaled(out, rhs, 1);
        break;
      case IndexOp::Sub:
        add_scaled(out, lhs, 1);
        add_scaled(out, rhs, -1);
        break;
      case IndexOp::Mul:
        if (is_constant(lhs)) {
          add_scaled(out, rhs, lhs.constant);
        } else if (is_constant(rhs)) {
          add_scaled(out, lhs, rhs.constant);
        } else {
          std::string kl = canonical_key(lhs), kr = canonical_key(rhs);
          if (kr < kl) std::swap(kl, kr);
          out.terms["(" + kl + ")*(" + kr + ")"] = 1;
        }
        break;
    }
  }
  return out;
}

bool equivalent(const Index& a, const Index& b) { return normalize(a) == normalize(b); }

bool equivalent(const std::vector<Index>& a, const std::vector<Index>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!equivalent(a[i], b[i])) return false;
  return true;
}

}  // namespace krn
