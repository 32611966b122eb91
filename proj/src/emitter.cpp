#include <charconv>
#include <cmath>
#include <sstream>

#include "krn/frontend.hpp"

namespace krn {

namespace {

constexpr int kAtom = 4;
constexpr int kUnary = 3;

int precedence(const Expr& e) {
  if (const auto* b = e.get<Binary>()) return (b->op == BinaryOp::Add || b->op == BinaryOp::Sub) ? 1 : 2;
  if (e.get<Negate>()) return kUnary;
  if (const auto* l = e.get<Literal>()) return std::signbit(l->value) ? kUnary : kAtom;
  return kAtom;
}

int precedence(const Index& e) {
  if (const auto* b = e.get<IndexBinary>()) return b->op == IndexOp::Mul ? 2 : 1;
  if (const auto* l = e.get<IntLiteral>()) return l->value < 0 ? kUnary : kAtom;
  return kAtom;
}

template <class Node>
std::string wrap(const Node& child, int min_prec) {
  std::string text = to_source(child);
  return precedence(child) < min_prec ? "(" + text + ")" : text;
}

const char* op_text(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return " + ";
    case BinaryOp::Sub: return " - ";
    case BinaryOp::Mul: return " * ";
    case BinaryOp::Div: return " / ";
  }
  return " ? ";
}

const char* op_text(IndexOp op) {
  switch (op) {
    case IndexOp::Add: return " + ";
    case IndexOp::Sub: return " - ";
    case IndexOp::Mul: return " * ";
  }
  return " ? ";
}

const char* op_text(AssignOp op) {
  switch (op) {
    case AssignOp::Set: return " = ";
    case AssignOp::Add: return " += ";
    case AssignOp::Sub: return " -= ";
  }
  return " ? ";
}

const char* op_text(CmpOp op) {
  switch (op) {
    case CmpOp::Ne: return " != ";
    case CmpOp::Eq: return " == ";
    case CmpOp::Lt: return " < ";
    case CmpOp::Gt: return " > ";
    case CmpOp::Le: return " <= ";
    case CmpOp::Ge: return " >= ";
  }
  return " ? ";
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

std::string source_text(const std::variant<std::string, Expr>& src) {
  if (const auto* v = std::get_if<std::string>(&src)) return *v;
  return to_source(std::get<Expr>(src));
}

void emit_block(std::ostringstream& os, const std::vector<Stmt>& body, int indent) {
  os << "{\n";
  for (const Stmt& s : body) os << emit(s, indent + 1);
  os << std::string(static_cast<std::size_t>(indent) * 2, ' ') << "}\n";
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string to_source(const Index& e) {
  if (const auto* c = e.get<Counter>()) return c->name;
  if (const auto* l = e.get<IntLiteral>()) return std::to_string(l->value);
  if (const auto* x = e.get<Extent>()) return "extent(" + x->view + ", " + std::to_string(x->dim) + ")";
  if (const auto* a = e.get<ViewAccess>()) return to_source(*a);
  const auto& b = *e.get<IndexBinary>();
  int p = precedence(e);
  return wrap(b.lhs, p) + op_text(b.op) + wrap(b.rhs, p + 1);
}

std::string to_source(const Expr& e) {
  if (const auto* l = e.get<Literal>()) return format_number(l->value);
  if (const auto* s = e.get<ScalarRef>()) return s->name;
  if (const auto* c = e.get<Counter>()) return c->name;
  if (const auto* x = e.get<Extent>()) return "extent(" + x->view + ", " + std::to_string(x->dim) + ")";
  if (const auto* a = e.get<ViewAccess>()) return to_source(*a);
  if (const auto* n = e.get<Negate>()) {
    const Expr& o = n->operand;
    bool bare = o.get<ScalarRef>() || o.get<Counter>() || o.get<Extent>() || o.get<ViewAccess>();
    return bare ? "-" + to_source(o) : "-(" + to_source(o) + ")";
  }
  const auto& b = *e.get<Binary>();
  int p = precedence(e);
  return wrap(b.lhs, p) + op_text(b.op) + wrap(b.rhs, p + 1);
}

std::string to_source(const ViewAccess& a) {
  std::string out = a.view + "(";
  for (std::size_t i = 0; i < a.indices.size(); ++i) out += (i ? ", " : "") + to_source(a.indices[i]);
  return out + ")";
}

std::string to_source(const ViewType& t) {
  std::string out = "view<f64, " + std::to_string(t.rank);
  if (t.dynamic_count() != t.rank) {
    out += ", [";
    for (std::size_t i = 0; i < t.extents.size(); ++i)
      out += (i ? ", " : "") + (t.extents[i] ? std::to_string(*t.extents[i]) : std::string("*"));
    out += "]";
  }
  return out + ">";
}

std::string emit(const Stmt& stmt, int indent) {
  std::ostringstream os;
  os << std::string(static_cast<std::size_t>(indent) * 2, ' ');
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, DeclView>) {
          os << "let " << s.name << ": " << to_source(s.type) << " = view(" << quoted(s.label);
          for (const Index& e : s.dynamic_extents) os << ", " << to_source(e);
          os << ");\n";
        } else if constexpr (std::is_same_v<T, DeclScalar>) {
          os << "let " << s.name << ": f64";
          if (s.init) os << " = " << to_source(*s.init);
          os << ";\n";
        } else if constexpr (std::is_same_v<T, AssignView>) {
          if (s.atomic)
            os << "atomic_add(" << to_source(s.target) << ", " << to_source(s.value) << ");\n";
          else
            os << to_source(s.target) << op_text(s.op) << to_source(s.value) << ";\n";
        } else if constexpr (std::is_same_v<T, AssignScalar>) {
          if (s.atomic)
            os << "atomic_add(" << s.name << ", " << to_source(s.value) << ");\n";
          else
            os << s.name << op_text(s.op) << to_source(s.value) << ";\n";
        } else if constexpr (std::is_same_v<T, If>) {
          os << "if (" << to_source(s.cond.lhs) << op_text(s.cond.op) << to_source(s.cond.rhs) << ") ";
          emit_block(os, s.body, indent);
        } else if constexpr (std::is_same_v<T, ParallelFor>) {
          os << "parallel_for " << s.counter << " in 0.." << to_source(s.upper) << " ";
          emit_block(os, s.body, indent);
        } else if constexpr (std::is_same_v<T, DeepCopy>) {
          os << "deep_copy(" << s.dst << ", " << source_text(s.source) << ");\n";
        } else if constexpr (std::is_same_v<T, ParallelSum>) {
          os << s.scalar << " = parallel_sum(" << s.view << ");\n";
        } else if constexpr (std::is_same_v<T, ParallelAccumulate>) {
          os << "parallel_sum(" << s.view << ", " << source_text(s.source) << ");\n";
        } else if constexpr (std::is_same_v<T, Return>) {
          os << "return " << to_source(s.value) << ";\n";
        }
      },
      stmt.node().value);
  return os.str();
}

std::string emit(const FunctionDef& fn) {
  std::ostringstream os;
  os << "fn " << fn.name << "(";
  for (std::size_t i = 0; i < fn.params.size(); ++i) {
    const Param& p = fn.params[i];
    os << (i ? ", " : "") << p.name << ": " << (p.view ? to_source(*p.view) : std::string("f64"));
  }
  os << ")" << (fn.returns_scalar ? " -> f64 " : " ");
  emit_block(os, fn.body, 0);
  return os.str();
}

std::string emit(const Program& program) {
  std::string out;
  for (std::size_t i = 0; i < program.functions.size(); ++i) {
    if (i) out += "\n";
    out += emit(program.functions[i]);
  }
  return out;
}

}  // namespace krn
