#include "krn/ast.hpp"

#include <algorithm>

namespace krn {

Index::Index() : Index(IntLiteral{0}) {}

SourceSpan Index::span() const { return node_->span; }

bool operator==(const Index& a, const Index& b) {
  return a.node_ == b.node_ || a.node_->value == b.node_->value;
}

Expr::Expr() : Expr(Literal{0.0}) {}

SourceSpan Expr::span() const { return node_->span; }

bool operator==(const Expr& a, const Expr& b) {
  return a.node_ == b.node_ || a.node_->value == b.node_->value;
}

SourceSpan Stmt::span() const { return node_->span; }

bool operator==(const Stmt& a, const Stmt& b) {
  return a.node_ == b.node_ || a.node_->value == b.node_->value;
}

int ViewType::dynamic_count() const {
  return static_cast<int>(std::count(extents.begin(), extents.end(), std::nullopt));
}

const Param* FunctionDef::find_param(const std::string& n) const {
  for (const Param& p : params)
    if (p.name == n) return &p;
  return nullptr;
}

const FunctionDef* Program::find(const std::string& name) const {
  for (const FunctionDef& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

void collect_scalar_reads(const Expr& e, std::vector<std::string>& out) {
  if (const auto* s = e.get<ScalarRef>()) {
    out.push_back(s->name);
  } else if (const auto* b = e.get<Binary>()) {
    collect_scalar_reads(b->lhs, out);
    collect_scalar_reads(b->rhs, out);
  } else if (const auto* n = e.get<Negate>()) {
    collect_scalar_reads(n->operand, out);
  }
}

void collect_views(const Index& e, std::vector<std::string>& out) {
  if (const auto* x = e.get<Extent>()) {
    out.push_back(x->view);
  } else if (const auto* b = e.get<IndexBinary>()) {
    collect_views(b->lhs, out);
    collect_views(b->rhs, out);
  } else if (const auto* a = e.get<ViewAccess>()) {
    out.push_back(a->view);
    for (const Index& i : a->indices) collect_views(i, out);
  }
}

void collect_views(const Expr& e, std::vector<std::string>& out) {
  if (const auto* x = e.get<Extent>()) {
    out.push_back(x->view);
  } else if (const auto* b = e.get<Binary>()) {
    collect_views(b->lhs, out);
    collect_views(b->rhs, out);
  } else if (const auto* n = e.get<Negate>()) {
    collect_views(n->operand, out);
  } else if (const auto* a = e.get<ViewAccess>()) {
    out.push_back(a->view);
    for (const Index& i : a->indices) collect_views(i, out);
  }
}

int count_kernels(const std::vector<Stmt>& body) {
  int n = 0;
  walk_statements(body, [&](const Stmt& s) {
    if (s.get<ParallelFor>()) ++n;
  });
  return n;
}

}  // namespace krn
