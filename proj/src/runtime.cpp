#include "krn/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "krn/error.hpp"
#include "krn/thread_pool.hpp"

namespace krn {

// ---------------------------------------------------------------------------
// View

namespace {

std::size_t element_count(const std::vector<std::int64_t>& extents) {
  std::size_t n = 1;
  for (std::int64_t e : extents) {
    if (e < 0) throw Error(ErrorKind::ShapeMismatch, "negative extent " + std::to_string(e));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

[[noreturn]] void out_of_bounds(const std::string& view, std::int64_t i, std::int64_t extent, int dim) {
  throw Error(ErrorKind::OutOfBounds, "index " + std::to_string(i) + " out of bounds for dimension " +
                                          std::to_string(dim) + " of '" + view + "' (extent " +
                                          std::to_string(extent) + ")");
}

}  // namespace

View::View(std::vector<std::int64_t> extents)
    : buf_(std::make_shared<std::vector<double>>(element_count(extents), 0.0)), extents_(std::move(extents)) {
  if (extents_.empty() || extents_.size() > 2) throw Error(ErrorKind::ShapeMismatch, "view rank must be 1 or 2");
}

View::View(std::vector<std::int64_t> extents, std::vector<double> values) : View(std::move(extents)) {
  if (values.size() != buf_->size())
    throw Error(ErrorKind::ShapeMismatch, "view needs " + std::to_string(buf_->size()) + " values, got " +
                                              std::to_string(values.size()));
  *buf_ = std::move(values);
}

std::size_t View::offset(std::int64_t i, std::int64_t j, int arity) const {
  if (arity != rank())
    throw Error(ErrorKind::ShapeMismatch, "rank-" + std::to_string(rank()) + " view accessed with " +
                                              std::to_string(arity) + " indices");
  if (i < 0 || i >= extents_[0]) out_of_bounds("view", i, extents_[0], 0);
  if (arity == 1) return static_cast<std::size_t>(i);
  if (j < 0 || j >= extents_[1]) out_of_bounds("view", j, extents_[1], 1);
  return static_cast<std::size_t>(i * extents_[1] + j);
}

double& View::operator()(std::int64_t i) { return (*buf_)[offset(i, 0, 1)]; }
double& View::operator()(std::int64_t i, std::int64_t j) { return (*buf_)[offset(i, j, 2)]; }
double View::operator()(std::int64_t i) const { return (*buf_)[offset(i, 0, 1)]; }
double View::operator()(std::int64_t i, std::int64_t j) const { return (*buf_)[offset(i, j, 2)]; }

View View::clone() const {
  View v;
  v.extents_ = extents_;
  if (buf_) v.buf_ = std::make_shared<std::vector<double>>(*buf_);
  return v;
}

Inputs clone_inputs(const Inputs& inputs) {
  Inputs out;
  for (const auto& [name, value] : inputs) {
    if (const auto* v = std::get_if<View>(&value))
      out.emplace(name, v->clone());
    else
      out.emplace(name, value);
  }
  return out;
}

int effective_threads(const ExecutionConfig& cfg) {
  int threads = cfg.threads;
  if (const char* env = std::getenv("KRN_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) threads = static_cast<int>(v);
  }
  if (threads < 1) throw Error(ErrorKind::InvalidArgument, "thread count must be at least 1");
  return threads;
}

std::string to_string(AccessKind k) {
  switch (k) {
    case AccessKind::Read: return "read";
    case AccessKind::Write: return "write";
    case AccessKind::AtomicWrite: return "atomic-write";
  }
  return "?";
}

std::set<std::int64_t> ConflictReport::offsets(const std::string& view) const {
  std::set<std::int64_t> out;
  for (const Conflict& c : conflicts)
    if (c.view == view) out.insert(c.offset);
  return out;
}

std::string ConflictReport::format() const {
  std::ostringstream os;
  for (const Conflict& c : conflicts) {
    os << "kernel#" << c.kernel << " view=" << c.view << " offset=" << c.offset << " iterations=[";
    for (std::size_t i = 0; i < c.iterations.size(); ++i) os << (i ? ", " : "") << c.iterations[i];
    os << "] kinds=[";
    bool first = true;
    for (AccessKind k : c.kinds) {
      os << (first ? "" : ", ") << to_string(k);
      first = false;
    }
    os << "]\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Builtins

void atomic_add(double& location, double value) {
  std::atomic_ref<double>(location).fetch_add(value, std::memory_order_relaxed);
}

namespace {

double block_sum(const double* data, std::size_t n, std::size_t block) {
  double s = 0.0;
  for (std::size_t i = block * kSumBlock; i < std::min(n, (block + 1) * kSumBlock); ++i) s += data[i];
  return s;
}

// Adjacent pairs, level by level; an odd tail is carried up unchanged.
double tree_sum(std::vector<double> partial) {
  if (partial.empty()) return 0.0;
  while (partial.size() > 1) {
    std::size_t half = (partial.size() + 1) / 2;
    for (std::size_t i = 0; i < partial.size() / 2; ++i) partial[i] = partial[2 * i] + partial[2 * i + 1];
    if (partial.size() % 2) partial[half - 1] = partial.back();
    partial.resize(half);
  }
  return partial[0];
}

}  // namespace

double pairwise_sum(const double* data, std::size_t n) {
  std::size_t blocks = (n + kSumBlock - 1) / kSumBlock;
  std::vector<double> partial(blocks);
  for (std::size_t b = 0; b < blocks; ++b) partial[b] = block_sum(data, n, b);
  return tree_sum(std::move(partial));
}

double parallel_sum(const View& src, bool deterministic) {
  if (!src.valid()) return 0.0;
  if (deterministic) return pairwise_sum(src.data(), src.size());
  double s = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) s += src.data()[i];
  return s;
}

void parallel_sum(View& dst, double value) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += value;
}

void parallel_sum(View& dst, const View& src) {
  if (dst.extents() != src.extents()) throw Error(ErrorKind::ShapeMismatch, "parallel_sum operands differ in shape");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
}

// ---------------------------------------------------------------------------
// Interpreter

namespace {

enum class EOp : std::uint8_t { Const, Global, Local, Counter, Extent, Access, Add, Sub, Mul, Div, Neg };
enum class IOp : std::uint8_t { Const, Counter, Extent, Add, Sub, Mul, Access };

struct ENode {
  EOp op = EOp::Const;
  int a = -1;
  int b = -1;
  int slot = -1;
  int dim = 0;
  double value = 0.0;
};

struct INode {
  IOp op = IOp::Const;
  int a = -1;
  int b = -1;
  int slot = -1;
  int dim = 0;
  std::int64_t value = 0;
};

struct CAccess {
  int view = -1;
  int rank = 1;
  int idx[2] = {-1, -1};
};

enum class SK : std::uint8_t {
  DeclView, DeclScalar, AssignView, AssignScalar, If, Kernel, CopyView, Fill, Gather, AccView, Broadcast, Return
};

struct CStmt {
  SK kind = SK::Return;
  int access = -1;
  int view = -1;
  int view2 = -1;
  int scalar = -1;
  bool local = false;
  int expr = -1;
  AssignOp op = AssignOp::Set;
  bool atomic = false;
  CmpOp cmp = CmpOp::Ne;
  int ilhs = -1;
  int irhs = -1;
  std::vector<int> body;
  int upper = -1;
  int kernel = 0;
  bool sequential_det = false;
  ViewType type;
  std::vector<int> dyn_extents;
};

struct VRef {
  double* data = nullptr;
  std::int64_t ext[2] = {0, 0};
  int rank = 0;
};

enum class AtomicMode { Direct, Atomic, Buffer };

struct AccessLog {
  struct Entry {
    std::vector<std::int64_t> iterations;
    std::set<AccessKind> kinds;
    bool write = false;
  };
  std::int64_t iteration = 0;
  std::unordered_map<std::uint64_t, Entry> entries;

  void record(int entity, std::int64_t offset, AccessKind kind) {
    Entry& e = entries[(static_cast<std::uint64_t>(entity) << 40) | static_cast<std::uint64_t>(offset)];
    e.kinds.insert(kind);
    if (kind == AccessKind::Write) e.write = true;
    if (e.iterations.empty() || e.iterations.back() != iteration) e.iterations.push_back(iteration);
  }
};

struct Frame {
  double* locals = nullptr;
  std::int64_t counter = 0;
  AtomicMode mode = AtomicMode::Direct;
  std::vector<std::pair<double*, double>>* buffer = nullptr;
  AccessLog* log = nullptr;
};

enum class SymKind { View, Global, Local, Counter };
struct Sym {
  SymKind kind;
  int slot;
};

}  // namespace

struct Interpreter::Impl {
  // compiled program
  std::vector<ENode> enodes;
  std::vector<INode> inodes;
  std::vector<CAccess> accesses;
  std::vector<CStmt> stmts;
  std::vector<int> body;
  std::vector<std::string> view_names;
  std::vector<std::string> global_names;
  std::vector<std::pair<std::string, Sym>> params;
  std::vector<std::optional<ViewType>> param_types;
  int max_locals = 1;
  bool returns = false;

  // run state
  ExecutionConfig cfg;
  std::vector<View> views;
  std::vector<VRef> vrefs;
  std::vector<double> globals;
  std::optional<double> result;
  std::unique_ptr<ThreadPool> pool;
  std::vector<std::vector<double>> locals;
  std::vector<std::vector<std::pair<double*, double>>> buffers;
  ConflictReport report;

  // -- compilation ---------------------------------------------------------

  std::vector<std::map<std::string, Sym>> scopes;
  int next_local = 0;
  int kernel_count = 0;

  const Sym& lookup(const std::string& name) const {
    for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
      auto f = it->find(name);
      if (f != it->end()) return f->second;
    }
    throw Error(ErrorKind::Validation, "unknown identifier '" + name + "'");
  }

  int new_view(const std::string& name) {
    view_names.push_back(name);
    return static_cast<int>(view_names.size()) - 1;
  }

  int new_global(const std::string& name) {
    global_names.push_back(name);
    return static_cast<int>(global_names.size()) - 1;
  }

  int view_slot(const std::string& name) const {
    const Sym& s = lookup(name);
    if (s.kind != SymKind::View) throw Error(ErrorKind::Validation, "'" + name + "' is not a view");
    return s.slot;
  }

  int compile_access(const ViewAccess& a) {
    CAccess c;
    c.view = view_slot(a.view);
    c.rank = static_cast<int>(a.indices.size());
    if (c.rank < 1 || c.rank > 2) throw Error(ErrorKind::Validation, "bad subscript count for '" + a.view + "'");
    for (int d = 0; d < c.rank; ++d) c.idx[d] = compile_index(a.indices[static_cast<std::size_t>(d)]);
    accesses.push_back(c);
    return static_cast<int>(accesses.size()) - 1;
  }

  int push(INode n) {
    inodes.push_back(n);
    return static_cast<int>(inodes.size()) - 1;
  }

  int push(ENode n) {
    enodes.push_back(n);
    return static_cast<int>(enodes.size()) - 1;
  }

  int compile_index(const Index& e) {
    INode n;
    if (const auto* l = e.get<IntLiteral>()) {
      n.op = IOp::Const;
      n.value = l->value;
    } else if (const auto* c = e.get<Counter>()) {
      if (lookup(c->name).kind != SymKind::Counter)
        throw Error(ErrorKind::Validation, "'" + c->name + "' is not a loop counter");
      n.op = IOp::Counter;
    } else if (const auto* x = e.get<Extent>()) {
      n.op = IOp::Extent;
      n.slot = view_slot(x->view);
      n.dim = x->dim;
    } else if (const auto* a = e.get<ViewAccess>()) {
      n.op = IOp::Access;
      n.a = compile_access(*a);
    } else {
      const auto& b = *e.get<IndexBinary>();
      n.op = b.op == IndexOp::Add ? IOp::Add : b.op == IndexOp::Sub ? IOp::Sub : IOp::Mul;
      n.a = compile_index(b.lhs);
      n.b = compile_index(b.rhs);
    }
    return push(n);
  }

  int compile_expr(const Expr& e) {
    ENode n;
    if (const auto* l = e.get<Literal>()) {
      n.op = EOp::Const;
      n.value = l->value;
    } else if (const auto* s = e.get<ScalarRef>()) {
      const Sym& sym = lookup(s->name);
      if (sym.kind == SymKind::Global)
        n.op = EOp::Global;
      else if (sym.kind == SymKind::Local)
        n.op = EOp::Local;
      else if (sym.kind == SymKind::Counter)
        n.op = EOp::Counter;
      else
        throw Error(ErrorKind::Validation, "view '" + s->name + "' used as a scalar");
      n.slot = sym.slot;
    } else if (const auto* c = e.get<Counter>()) {
      if (lookup(c->name).kind != SymKind::Counter)
        throw Error(ErrorKind::Validation, "'" + c->name + "' is not a loop counter");
      n.op = EOp::Counter;
    } else if (const auto* x = e.get<Extent>()) {
      n.op = EOp::Extent;
      n.slot = view_slot(x->view);
      n.dim = x->dim;
    } else if (const auto* a = e.get<ViewAccess>()) {
      n.op = EOp::Access;
      n.a = compile_access(*a);
    } else if (const auto* ng = e.get<Negate>()) {
      n.op = EOp::Neg;
      n.a = compile_expr(ng->operand);
    } else {
      const auto& b = *e.get<Binary>();
      switch (b.op) {
        case BinaryOp::Add: n.op = EOp::Add; break;
        case BinaryOp::Sub: n.op = EOp::Sub; break;
        case BinaryOp::Mul: n.op = EOp::Mul; break;
        case BinaryOp::Div: n.op = EOp::Div; break;
      }
      n.a = compile_expr(b.lhs);
      n.b = compile_expr(b.rhs);
    }
    return push(n);
  }

  int add_stmt(CStmt s) {
    stmts.push_back(std::move(s));
    return static_cast<int>(stmts.size()) - 1;
  }

  void set_scalar_target(CStmt& c, const std::string& name) {
    const Sym& sym = lookup(name);
    if (sym.kind != SymKind::Global && sym.kind != SymKind::Local)
      throw Error(ErrorKind::Validation, "'" + name + "' is not a scalar");
    c.scalar = sym.slot;
    c.local = sym.kind == SymKind::Local;
  }

  std::vector<int> compile_block(const std::vector<Stmt>& body, bool in_kernel) {
    scopes.emplace_back();
    std::vector<int> out;
    for (const Stmt& s : body) out.push_back(compile_stmt(s, in_kernel));
    scopes.pop_back();
    return out;
  }

  int compile_stmt(const Stmt& s, bool in_kernel) {
    CStmt c;
    if (const auto* d = s.get<DeclView>()) {
      c.kind = SK::DeclView;
      c.type = d->type;
      for (const Index& i : d->dynamic_extents) c.dyn_extents.push_back(compile_index(i));
      c.view = new_view(d->name);
      scopes.back()[d->name] = Sym{SymKind::View, c.view};
    } else if (const auto* d = s.get<DeclScalar>()) {
      c.kind = SK::DeclScalar;
      if (d->init) c.expr = compile_expr(*d->init);
      if (in_kernel) {
        c.local = true;
        c.scalar = next_local++;
        max_locals = std::max(max_locals, next_local);
        scopes.back()[d->name] = Sym{SymKind::Local, c.scalar};
      } else {
        c.scalar = new_global(d->name);
        scopes.back()[d->name] = Sym{SymKind::Global, c.scalar};
      }
    } else if (const auto* a = s.get<AssignView>()) {
      c.kind = SK::AssignView;
      c.access = compile_access(a->target);
      c.expr = compile_expr(a->value);
      c.op = a->atomic ? AssignOp::Add : a->op;
      c.atomic = a->atomic && in_kernel;
    } else if (const auto* a = s.get<AssignScalar>()) {
      c.kind = SK::AssignScalar;
      set_scalar_target(c, a->name);
      c.expr = compile_expr(a->value);
      c.op = a->atomic ? AssignOp::Add : a->op;
      c.atomic = a->atomic && in_kernel && !c.local;
    } else if (const auto* i = s.get<If>()) {
      c.kind = SK::If;
      c.cmp = i->cond.op;
      c.ilhs = compile_index(i->cond.lhs);
      c.irhs = compile_index(i->cond.rhs);
      c.body = compile_block(i->body, in_kernel);
    } else if (const auto* k = s.get<ParallelFor>()) {
      if (in_kernel) throw Error(ErrorKind::Validation, "nested parallel_for is not supported");
      c.kind = SK::Kernel;
      c.kernel = ++kernel_count;
      c.upper = compile_index(k->upper);
      scopes.emplace_back();
      scopes.back()[k->counter] = Sym{SymKind::Counter, 0};
      next_local = 0;
      std::size_t first = stmts.size();
      c.body = compile_block(k->body, true);
      scopes.pop_back();
      c.sequential_det = needs_sequential(first);
    } else if (const auto* d = s.get<DeepCopy>()) {
      c.view = view_slot(d->dst);
      if (const auto* src = std::get_if<std::string>(&d->source)) {
        c.kind = SK::CopyView;
        c.view2 = view_slot(*src);
      } else {
        c.kind = SK::Fill;
        c.expr = compile_expr(std::get<Expr>(d->source));
      }
    } else if (const auto* p = s.get<ParallelSum>()) {
      c.kind = SK::Gather;
      c.view = view_slot(p->view);
      bool known = false;
      for (auto it = scopes.rbegin(); it != scopes.rend() && !known; ++it) known = it->count(p->scalar) != 0;
      if (!known) scopes.back()[p->scalar] = Sym{SymKind::Global, new_global(p->scalar)};
      set_scalar_target(c, p->scalar);
    } else if (const auto* p = s.get<ParallelAccumulate>()) {
      c.view = view_slot(p->view);
      if (const auto* src = std::get_if<std::string>(&p->source)) {
        c.kind = SK::AccView;
        c.view2 = view_slot(*src);
      } else {
        c.kind = SK::Broadcast;
        c.expr = compile_expr(std::get<Expr>(p->source));
      }
    } else if (const auto* r = s.get<Return>()) {
      c.kind = SK::Return;
      c.expr = compile_expr(r->value);
    }
    return add_stmt(std::move(c));
  }

  // View slots and global scalar slots read by an expression or index.
  void touched_expr(int id, std::set<int>& views, std::set<int>& globs) const {
    const ENode& n = enodes[static_cast<std::size_t>(id)];
    if (n.op == EOp::Global) globs.insert(n.slot);
    if (n.op == EOp::Access) touched_access(n.a, views, globs);
    if (n.a >= 0 && n.op != EOp::Access) touched_expr(n.a, views, globs);
    if (n.b >= 0) touched_expr(n.b, views, globs);
  }

  void touched_index(int id, std::set<int>& views, std::set<int>& globs) const {
    const INode& n = inodes[static_cast<std::size_t>(id)];
    if (n.op == IOp::Access) {
      touched_access(n.a, views, globs);
      return;
    }
    if (n.a >= 0) touched_index(n.a, views, globs);
    if (n.b >= 0) touched_index(n.b, views, globs);
  }

  void touched_access(int id, std::set<int>& views, std::set<int>& globs) const {
    const CAccess& a = accesses[static_cast<std::size_t>(id)];
    views.insert(a.view);
    for (int d = 0; d < a.rank; ++d) touched_index(a.idx[d], views, globs);
  }

  // A kernel whose atomically updated entities are also read or plainly
  // written cannot defer its atomics, so deterministic mode runs it in order.
  bool needs_sequential(std::size_t first) const {
    std::set<int> atomic_views, atomic_globs, other_views, other_globs;
    for (std::size_t i = first; i < stmts.size(); ++i) {
      const CStmt& s = stmts[i];
      if (s.kind == SK::AssignView) {
        const CAccess& a = accesses[static_cast<std::size_t>(s.access)];
        (s.atomic ? atomic_views : other_views).insert(a.view);
        for (int d = 0; d < a.rank; ++d) touched_index(a.idx[d], other_views, other_globs);
        if (!s.atomic && s.op != AssignOp::Set) other_views.insert(a.view);
      } else if (s.kind == SK::AssignScalar && !s.local) {
        (s.atomic ? atomic_globs : other_globs).insert(s.scalar);
      }
      if (s.expr >= 0) touched_expr(s.expr, other_views, other_globs);
      if (s.ilhs >= 0) touched_index(s.ilhs, other_views, other_globs);
      if (s.irhs >= 0) touched_index(s.irhs, other_views, other_globs);
    }
    for (int v : atomic_views)
      if (other_views.count(v)) return true;
    for (int g : atomic_globs)
      if (other_globs.count(g)) return true;
    return false;
  }

  void compile(const FunctionDef& fn) {
    scopes.emplace_back();
    for (const Param& p : fn.params) {
      Sym sym = p.view ? Sym{SymKind::View, new_view(p.name)} : Sym{SymKind::Global, new_global(p.name)};
      scopes.back()[p.name] = sym;
      params.emplace_back(p.name, sym);
      param_types.push_back(p.view);
    }
    for (const Stmt& s : fn.body) body.push_back(compile_stmt(s, false));
    scopes.clear();
    returns = fn.returns_scalar;
  }

  // -- execution -----------------------------------------------------------

  void bind_view(int slot, View v) {
    views[static_cast<std::size_t>(slot)] = std::move(v);
    const View& view = views[static_cast<std::size_t>(slot)];
    VRef& r = vrefs[static_cast<std::size_t>(slot)];
    r.data = view.valid() ? const_cast<double*>(view.data()) : nullptr;
    r.rank = view.rank();
    r.ext[0] = r.rank > 0 ? view.extent(0) : 0;
    r.ext[1] = r.rank > 1 ? view.extent(1) : 1;
  }

  std::int64_t ieval(int id, Frame& f) {
    const INode& n = inodes[static_cast<std::size_t>(id)];
    switch (n.op) {
      case IOp::Const: return n.value;
      case IOp::Counter: return f.counter;
      case IOp::Extent: return vrefs[static_cast<std::size_t>(n.slot)].ext[n.dim];
      case IOp::Add: return ieval(n.a, f) + ieval(n.b, f);
      case IOp::Sub: return ieval(n.a, f) - ieval(n.b, f);
      case IOp::Mul: return ieval(n.a, f) * ieval(n.b, f);
      case IOp::Access: {
        double v = *locate(n.a, f, AccessKind::Read);
        if (!std::isfinite(v)) throw Error(ErrorKind::OutOfBounds, "non-finite value used as an index");
        return static_cast<std::int64_t>(std::llround(v));
      }
    }
    return 0;
  }

  double* locate(int id, Frame& f, AccessKind kind) {
    const CAccess& a = accesses[static_cast<std::size_t>(id)];
    const VRef& v = vrefs[static_cast<std::size_t>(a.view)];
    if (!v.data) throw Error(ErrorKind::InvalidArgument, "view '" + view_names[static_cast<std::size_t>(a.view)] + "' is not bound");
    std::int64_t i = ieval(a.idx[0], f);
    if (i < 0 || i >= v.ext[0]) out_of_bounds(view_names[static_cast<std::size_t>(a.view)], i, v.ext[0], 0);
    std::int64_t off = i;
    if (a.rank == 2) {
      std::int64_t j = ieval(a.idx[1], f);
      if (j < 0 || j >= v.ext[1]) out_of_bounds(view_names[static_cast<std::size_t>(a.view)], j, v.ext[1], 1);
      off = i * v.ext[1] + j;
    }
    if (f.log) f.log->record(a.view, off, kind);
    return v.data + off;
  }

  double eval(int id, Frame& f) {
    const ENode& n = enodes[static_cast<std::size_t>(id)];
    switch (n.op) {
      case EOp::Const: return n.value;
      case EOp::Global:
        if (f.log) f.log->record(static_cast<int>(views.size()) + n.slot, 0, AccessKind::Read);
        return globals[static_cast<std::size_t>(n.slot)];
      case EOp::Local: return f.locals[n.slot];
      case EOp::Counter: return static_cast<double>(f.counter);
      case EOp::Extent: return static_cast<double>(vrefs[static_cast<std::size_t>(n.slot)].ext[n.dim]);
      case EOp::Access: return *locate(n.a, f, AccessKind::Read);
      case EOp::Add: return eval(n.a, f) + eval(n.b, f);
      case EOp::Sub: return eval(n.a, f) - eval(n.b, f);
      case EOp::Mul: return eval(n.a, f) * eval(n.b, f);
      case EOp::Div: return eval(n.a, f) / eval(n.b, f);
      case EOp::Neg: return -eval(n.a, f);
    }
    return 0.0;
  }

  void check(double v, const char* what) const {
    if (cfg.check_finite && !std::isfinite(v))
      throw Error(ErrorKind::NonFinite, std::string("non-finite value stored by ") + what);
  }

  void update(double* p, AssignOp op, double v, bool atomic, Frame& f) {
    if (atomic) {
      switch (f.mode) {
        case AtomicMode::Direct: *p += v; break;
        case AtomicMode::Atomic: atomic_add(*p, v); break;
        case AtomicMode::Buffer: f.buffer->emplace_back(p, v); break;
      }
      return;
    }
    switch (op) {
      case AssignOp::Set: *p = v; break;
      case AssignOp::Add: *p += v; break;
      case AssignOp::Sub: *p -= v; break;
    }
  }

  View& view_at(int slot) {
    View& v = views[static_cast<std::size_t>(slot)];
    if (!v.valid()) throw Error(ErrorKind::InvalidArgument, "view '" + view_names[static_cast<std::size_t>(slot)] + "' is not bound");
    return v;
  }

  // Runs body(lo, hi) over [0, n) split across the pool.
  template <class F>
  void bulk(std::size_t n, F&& body) {
    int T = pool->size();
    if (T == 1 || n < 4096) {
      body(std::size_t{0}, n);
      return;
    }
    pool->run([&](int t) {
      auto [lo, hi] = ThreadPool::chunk(static_cast<std::int64_t>(n), t, T);
      body(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi));
    });
  }

  double gather(const View& v) {
    std::size_t n = v.size();
    const double* d = v.data();
    int T = pool->size();
    if (cfg.deterministic_reduction || T == 1 || n < 4096) {
      if (T == 1 || n < 4096) return cfg.deterministic_reduction ? pairwise_sum(d, n) : parallel_sum(v, false);
      // Block sums in parallel, then the same tree as pairwise_sum.
      std::size_t blocks = (n + kSumBlock - 1) / kSumBlock;
      std::vector<double> partial(blocks);
      pool->run([&](int t) {
        auto [lo, hi] = ThreadPool::chunk(static_cast<std::int64_t>(blocks), t, T);
        for (auto b = static_cast<std::size_t>(lo); b < static_cast<std::size_t>(hi); ++b)
          partial[b] = block_sum(d, n, b);
      });
      return tree_sum(std::move(partial));
    }
    std::vector<double> partial(static_cast<std::size_t>(T));
    pool->run([&](int t) {
      auto [lo, hi] = ThreadPool::chunk(static_cast<std::int64_t>(n), t, T);
      double s = 0.0;
      for (auto i = lo; i < hi; ++i) s += d[i];
      partial[static_cast<std::size_t>(t)] = s;
    });
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
  }

  void run_iterations(const CStmt& k, Frame& f, std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      f.counter = i;
      for (int c : k.body) exec(c, f);
    }
  }

  void kernel(const CStmt& k, Frame& outer) {
    std::int64_t n = ieval(k.upper, outer);
    if (n <= 0) return;
    if (cfg.conflict_detect) {
      run_logged(k, n);
      return;
    }
    int T = pool->size();
    bool sequential = T == 1 || n == 1 || (cfg.deterministic_reduction && k.sequential_det);
    if (sequential) {
      Frame f{locals[0].data(), 0, AtomicMode::Direct, nullptr, nullptr};
      run_iterations(k, f, 0, n);
      return;
    }
    bool buffered = cfg.deterministic_reduction;
    pool->run([&](int t) {
      auto [lo, hi] = ThreadPool::chunk(n, t, T);
      auto& buf = buffers[static_cast<std::size_t>(t)];
      buf.clear();
      Frame f{locals[static_cast<std::size_t>(t)].data(), 0, buffered ? AtomicMode::Buffer : AtomicMode::Atomic, &buf,
              nullptr};
      run_iterations(k, f, lo, hi);
    });
    // Chunks are contiguous and in order, so replaying buffers thread by
    // thread applies the atomic updates in iteration order.
    if (buffered)
      for (auto& buf : buffers) {
        for (auto [p, v] : buf) *p += v;
        buf.clear();
      }
  }

  void run_logged(const CStmt& k, std::int64_t n) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.rng_seed);
    std::shuffle(order.begin(), order.end(), rng);
    AccessLog log;
    Frame f{locals[0].data(), 0, AtomicMode::Direct, nullptr, &log};
    for (std::int64_t i : order) {
      log.iteration = i;
      f.counter = i;
      for (int c : k.body) exec(c, f);
    }
    std::vector<Conflict> found;
    for (auto& [key, e] : log.entries) {
      if (!e.write) continue;
      std::sort(e.iterations.begin(), e.iterations.end());
      e.iterations.erase(std::unique(e.iterations.begin(), e.iterations.end()), e.iterations.end());
      if (e.iterations.size() < 2) continue;
      int entity = static_cast<int>(key >> 40);
      Conflict c;
      c.kernel = k.kernel;
      c.view = entity < static_cast<int>(views.size())
                   ? view_names[static_cast<std::size_t>(entity)]
                   : global_names[static_cast<std::size_t>(entity - static_cast<int>(views.size()))];
      c.offset = static_cast<std::int64_t>(key & ((std::uint64_t{1} << 40) - 1));
      c.iterations = e.iterations;
      c.kinds = e.kinds;
      found.push_back(std::move(c));
    }
    std::sort(found.begin(), found.end(), [](const Conflict& a, const Conflict& b) {
      return std::tie(a.view, a.offset) < std::tie(b.view, b.offset);
    });
    report.conflicts.insert(report.conflicts.end(), found.begin(), found.end());
  }

  bool compare(CmpOp op, std::int64_t a, std::int64_t b) const {
    switch (op) {
      case CmpOp::Ne: return a != b;
      case CmpOp::Eq: return a == b;
      case CmpOp::Lt: return a < b;
      case CmpOp::Gt: return a > b;
      case CmpOp::Le: return a <= b;
      case CmpOp::Ge: return a >= b;
    }
    return false;
  }

  void exec(int id, Frame& f) {
    const CStmt& s = stmts[static_cast<std::size_t>(id)];
    switch (s.kind) {
      case SK::DeclView: {
        std::vector<std::int64_t> ext;
        std::size_t dyn = 0;
        for (const auto& e : s.type.extents) ext.push_back(e ? *e : ieval(s.dyn_extents[dyn++], f));
        bind_view(s.view, View(ext));
        break;
      }
      case SK::DeclScalar: {
        double v = s.expr >= 0 ? eval(s.expr, f) : 0.0;
        check(v, "a declaration");
        (s.local ? f.locals[s.scalar] : globals[static_cast<std::size_t>(s.scalar)]) = v;
        break;
      }
      case SK::AssignView: {
        double v = eval(s.expr, f);
        if (s.op != AssignOp::Set && !s.atomic) locate(s.access, f, AccessKind::Read);
        double* p = locate(s.access, f, s.atomic ? AccessKind::AtomicWrite : AccessKind::Write);
        update(p, s.op, v, s.atomic, f);
        check(*p, "an assignment");
        break;
      }
      case SK::AssignScalar: {
        double v = eval(s.expr, f);
        double* p = s.local ? &f.locals[s.scalar] : &globals[static_cast<std::size_t>(s.scalar)];
        if (f.log && !s.local)
          f.log->record(static_cast<int>(views.size()) + s.scalar, 0,
                        s.atomic ? AccessKind::AtomicWrite : AccessKind::Write);
        update(p, s.op, v, s.atomic, f);
        check(*p, "an assignment");
        break;
      }
      case SK::If:
        if (compare(s.cmp, ieval(s.ilhs, f), ieval(s.irhs, f)))
          for (int c : s.body) exec(c, f);
        break;
      case SK::Kernel: kernel(s, f); break;
      case SK::CopyView: {
        View& dst = view_at(s.view);
        const View& src = view_at(s.view2);
        if (dst.extents() != src.extents())
          throw Error(ErrorKind::ShapeMismatch, "deep_copy between '" + view_names[static_cast<std::size_t>(s.view)] +
                                                    "' and '" + view_names[static_cast<std::size_t>(s.view2)] +
                                                    "' of different shapes");
        double* d = dst.data();
        const double* q = src.data();
        bulk(dst.size(), [&](std::size_t lo, std::size_t hi) { std::copy(q + lo, q + hi, d + lo); });
        break;
      }
      case SK::Fill: {
        double v = eval(s.expr, f);
        View& dst = view_at(s.view);
        double* d = dst.data();
        bulk(dst.size(), [&](std::size_t lo, std::size_t hi) { std::fill(d + lo, d + hi, v); });
        break;
      }
      case SK::Gather: {
        double v = gather(view_at(s.view));
        check(v, "parallel_sum");
        globals[static_cast<std::size_t>(s.scalar)] = v;
        break;
      }
      case SK::AccView: {
        View& dst = view_at(s.view);
        const View& src = view_at(s.view2);
        if (dst.extents() != src.extents())
          throw Error(ErrorKind::ShapeMismatch, "parallel_sum between '" + view_names[static_cast<std::size_t>(s.view)] +
                                                    "' and '" + view_names[static_cast<std::size_t>(s.view2)] +
                                                    "' of different shapes");
        double* d = dst.data();
        const double* q = src.data();
        bulk(dst.size(), [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) d[i] += q[i];
        });
        break;
      }
      case SK::Broadcast: {
        double v = eval(s.expr, f);
        View& dst = view_at(s.view);
        double* d = dst.data();
        bulk(dst.size(), [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) d[i] += v;
        });
        break;
      }
      case SK::Return: result = eval(s.expr, f); break;
    }
  }

  ExecResult run(Inputs& inputs, const ExecutionConfig& config) {
    cfg = config;
    int T = cfg.conflict_detect ? 1 : effective_threads(cfg);
    if (!pool || pool->size() != T) pool = std::make_unique<ThreadPool>(T);
    locals.assign(static_cast<std::size_t>(T), std::vector<double>(static_cast<std::size_t>(max_locals), 0.0));
    buffers.assign(static_cast<std::size_t>(T), {});
    views.assign(view_names.size(), View());
    vrefs.assign(view_names.size(), VRef());
    globals.assign(global_names.size(), 0.0);
    result.reset();
    report = ConflictReport();

    for (const auto& [name, value] : inputs) {
      bool known = std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
      if (!known) throw Error(ErrorKind::InvalidArgument, "no parameter named '" + name + "'");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, sym] = params[i];
      auto it = inputs.find(name);
      if (it == inputs.end()) throw Error(ErrorKind::InvalidArgument, "missing input for parameter '" + name + "'");
      if (sym.kind == SymKind::View) {
        const auto* v = std::get_if<View>(&it->second);
        if (!v || !v->valid()) throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' expects a view");
        const ViewType& t = *param_types[i];
        if (v->rank() != t.rank)
          throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' expects rank " + std::to_string(t.rank) +
                                                    ", got rank " + std::to_string(v->rank()));
        for (int d = 0; d < t.rank; ++d)
          if (const auto& e = t.extents[static_cast<std::size_t>(d)]; e && *e != v->extent(d))
            throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' expects extent " + std::to_string(*e) +
                                                      " in dimension " + std::to_string(d));
        bind_view(sym.slot, *v);
      } else {
        const auto* d = std::get_if<double>(&it->second);
        if (!d) throw Error(ErrorKind::ShapeMismatch, "parameter '" + name + "' expects a scalar");
        globals[static_cast<std::size_t>(sym.slot)] = *d;
      }
    }

    Frame top{locals[0].data(), 0, AtomicMode::Direct, nullptr, nullptr};
    for (int s : body) exec(s, top);

    ExecResult out;
    if (returns) out.value = result;
    out.conflicts = std::move(report);
    views.assign(view_names.size(), View());  // drop references to caller storage
    vrefs.assign(view_names.size(), VRef());
    return out;
  }
};

Interpreter::Interpreter(const Program& program, const std::string& fn) : impl_(std::make_unique<Impl>()) {
  const FunctionDef* f = program.find(fn);
  if (!f) throw Error(ErrorKind::UnknownFunction, "unknown function '" + fn + "'");
  impl_->compile(*f);
}

Interpreter::~Interpreter() = default;
Interpreter::Interpreter(Interpreter&&) noexcept = default;
Interpreter& Interpreter::operator=(Interpreter&&) noexcept = default;

ExecResult Interpreter::run(Inputs& inputs, const ExecutionConfig& cfg) { return impl_->run(inputs, cfg); }

ExecResult execute(const Program& program, const std::string& fn, Inputs& inputs, const ExecutionConfig& cfg) {
  Interpreter interp(program, fn);
  return interp.run(inputs, cfg);
}

ConflictReport detect_conflicts(const Program& program, const std::string& fn, Inputs& inputs, ExecutionConfig cfg) {
  cfg.conflict_detect = true;
  return execute(program, fn, inputs, cfg).conflicts;
}

}  // namespace krn
