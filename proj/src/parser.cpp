#include <cctype>
#include <charconv>
#include <set>
#include <string>
#include <vector>

#include "krn/frontend.hpp"
#include "krn/validate.hpp"

namespace krn {

namespace {

constexpr int kMaxDepth = 200;

enum class TokenKind { Ident, Number, String, Punct, End };

struct Token {
  TokenKind kind = TokenKind::End;
  std::string text;
  SourceSpan span;
};

const std::set<std::string, std::less<>> kKeywords = {
    "fn",     "let",         "view",   "f64",        "parallel_for", "in",
    "if",     "deep_copy",   "parallel_sum", "return", "atomic_add",  "extent",
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_trivia();
      Token t;
      std::size_t start = pos_;
      t.span = {start, start, line_, col_};
      if (pos_ >= text_.size()) {
        t.kind = TokenKind::End;
        out.push_back(t);
        return out;
      }
      char c = text_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
          advance();
        t.kind = TokenKind::Ident;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        lex_number();
        t.kind = TokenKind::Number;
      } else if (c == '"') {
        t.kind = TokenKind::String;
        t.text = lex_string(t.span);
      } else {
        lex_punct(t.span);
        t.kind = TokenKind::Punct;
      }
      if (t.kind != TokenKind::String) t.text = std::string(text_.substr(start, pos_ - start));
      t.span.end = pos_;
      out.push_back(std::move(t));
    }
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  bool digit_at(std::size_t p) const {
    return p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]));
  }

  void skip_trivia() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        advance();
      } else if (c == '/' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '/') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else {
        return;
      }
    }
  }

  void lex_number() {
    while (digit_at(pos_)) advance();
    if (pos_ < text_.size() && text_[pos_] == '.' && digit_at(pos_ + 1)) {
      advance();
      while (digit_at(pos_)) advance();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
      if (digit_at(p)) {
        while (pos_ < p) advance();
        while (digit_at(pos_)) advance();
      }
    }
  }

  std::string lex_string(SourceSpan span) {
    std::string out;
    advance();
    for (;;) {
      if (pos_ >= text_.size() || text_[pos_] == '\n') throw ParseError(span, "unterminated string literal");
      char c = text_[pos_];
      if (c == '"') {
        advance();
        return out;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= text_.size()) throw ParseError(span, "unterminated string literal");
        char e = text_[pos_];
        if (e != '"' && e != '\\') throw ParseError(span, "unsupported escape in string literal");
        out.push_back(e);
        advance();
        continue;
      }
      out.push_back(c);
      advance();
    }
  }

  void lex_punct(SourceSpan span) {
    static const char* kTwo[] = {"->", "<=", ">=", "==", "!=", "+=", "-=", ".."};
    for (const char* p : kTwo) {
      if (text_.substr(pos_, 2) == p) {
        advance();
        advance();
        return;
      }
    }
    static const std::string kOne = "(){}[],;:<>=+-*/";
    if (kOne.find(text_[pos_]) != std::string::npos) {
      advance();
      return;
    }
    std::string shown = std::isprint(static_cast<unsigned char>(text_[pos_]))
                            ? std::string(1, text_[pos_])
                            : "\\x" + std::to_string(static_cast<unsigned char>(text_[pos_]));
    throw ParseError(span, "unexpected character '" + shown + "'");
  }
};

SourceSpan join(SourceSpan a, SourceSpan b) { return {a.begin, b.end, a.line, a.column}; }

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  Program program() {
    Program p;
    while (!at_end()) p.functions.push_back(function());
    return p;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;
  std::set<std::string> views_;
  std::set<std::string> names_;
  std::vector<std::string> counters_;

  struct DepthGuard {
    Parser& p;
    explicit DepthGuard(Parser& parser) : p(parser) {
      if (++p.depth_ > kMaxDepth) throw ParseError(p.peek().span, "nesting too deep");
    }
    ~DepthGuard() { --p.depth_; }
  };

  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool at_end() const { return peek().kind == TokenKind::End; }
  const Token& take() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }

  bool is_punct(std::string_view p, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == TokenKind::Punct && t.text == p;
  }
  bool is_keyword(std::string_view k, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == TokenKind::Ident && t.text == k;
  }

  [[noreturn]] void fail(std::string message, std::vector<std::string> expected = {}) const {
    throw ParseError(peek().span, std::move(message), std::move(expected));
  }

  std::string describe(const Token& t) const {
    switch (t.kind) {
      case TokenKind::End: return "end of input";
      case TokenKind::String: return "string literal";
      default: return "'" + t.text + "'";
    }
  }

  const Token& expect_punct(std::string_view p) {
    if (!is_punct(p)) fail("unexpected " + describe(peek()), {"'" + std::string(p) + "'"});
    return take();
  }
  const Token& expect_keyword(std::string_view k) {
    if (!is_keyword(k)) fail("unexpected " + describe(peek()), {"'" + std::string(k) + "'"});
    return take();
  }
  const Token& expect_ident() {
    const Token& t = peek();
    if (t.kind != TokenKind::Ident || kKeywords.count(t.text))
      fail("unexpected " + describe(t), {"identifier"});
    names_.insert(t.text);
    return take();
  }
  std::int64_t expect_int() {
    const Token& t = peek();
    if (t.kind != TokenKind::Number) fail("unexpected " + describe(t), {"integer"});
    return int_value(take());
  }
  std::int64_t int_value(const Token& t) const {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size())
      throw ParseError(t.span, "expected an integer, found '" + t.text + "'");
    return v;
  }
  double real_value(const Token& t) const {
    double v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size())
      throw ParseError(t.span, "invalid number '" + t.text + "'");
    return v;
  }

  // --- declarations --------------------------------------------------------

  FunctionDef function() {
    views_.clear();
    names_.clear();
    counters_.clear();
    FunctionDef fn;
    SourceSpan start = expect_keyword("fn").span;
    fn.name = expect_ident().text;
    expect_punct("(");
    if (!is_punct(")")) {
      for (;;) {
        fn.params.push_back(param());
        if (is_punct(",")) {
          take();
          continue;
        }
        if (!is_punct(")")) fail("unexpected " + describe(peek()), {"','", "')'"});
        break;
      }
    }
    expect_punct(")");
    if (is_punct("->")) {
      take();
      expect_keyword("f64");
      fn.returns_scalar = true;
    }
    SourceSpan end;
    fn.body = block(&end);
    fn.span = join(start, end);
    return fn;
  }

  Param param() {
    Param p;
    const Token& name = expect_ident();
    p.name = name.text;
    expect_punct(":");
    if (is_keyword("f64")) {
      p.span = join(name.span, take().span);
    } else if (is_keyword("view")) {
      SourceSpan end;
      p.view = view_type(&end);
      views_.insert(p.name);
      p.span = join(name.span, end);
    } else {
      fail("unexpected " + describe(peek()), {"'f64'", "'view'"});
    }
    return p;
  }

  ViewType view_type(SourceSpan* end) {
    expect_keyword("view");
    expect_punct("<");
    expect_keyword("f64");
    expect_punct(",");
    ViewType t;
    SourceSpan rank_span = peek().span;
    std::int64_t rank = expect_int();
    if (rank < 1 || rank > 2) throw ParseError(rank_span, "view rank must be 1 or 2");
    t.rank = static_cast<int>(rank);
    t.extents.assign(static_cast<std::size_t>(rank), std::nullopt);
    if (is_punct(",")) {
      take();
      expect_punct("[");
      t.extents.clear();
      for (;;) {
        if (is_punct("*")) {
          take();
          t.extents.emplace_back(std::nullopt);
        } else {
          t.extents.emplace_back(expect_int());
        }
        if (is_punct(",")) {
          take();
          continue;
        }
        break;
      }
      expect_punct("]");
    }
    *end = expect_punct(">").span;
    return t;
  }

  std::vector<Stmt> block(SourceSpan* end = nullptr) {
    DepthGuard guard(*this);
    expect_punct("{");
    std::vector<Stmt> body;
    while (!is_punct("}")) {
      if (at_end()) fail("unexpected end of input", {"'}'"});
      statement(body);
    }
    const Token& close = take();
    if (end) *end = close.span;
    return body;
  }

  // --- statements ----------------------------------------------------------

  void statement(std::vector<Stmt>& out) {
    const Token& first = peek();
    SourceSpan start = first.span;
    if (is_keyword("let")) return out.push_back(let_statement());
    if (is_keyword("parallel_for")) return out.push_back(parallel_for());
    if (is_keyword("if")) {
      take();
      expect_punct("(");
      Condition cond;
      cond.lhs = index();
      cond.op = compare_op();
      cond.rhs = index();
      expect_punct(")");
      SourceSpan end;
      auto body = block(&end);
      return out.push_back(Stmt(If{std::move(cond), std::move(body)}, join(start, end)));
    }
    if (is_keyword("deep_copy")) {
      take();
      expect_punct("(");
      std::string dst = expect_ident().text;
      expect_punct(",");
      auto source = view_or_expr();
      expect_punct(")");
      SourceSpan end = expect_punct(";").span;
      return out.push_back(Stmt(DeepCopy{std::move(dst), std::move(source)}, join(start, end)));
    }
    if (is_keyword("parallel_sum")) {
      take();
      expect_punct("(");
      std::string dst = expect_ident().text;
      expect_punct(",");
      auto source = view_or_expr();
      expect_punct(")");
      SourceSpan end = expect_punct(";").span;
      return out.push_back(Stmt(ParallelAccumulate{std::move(dst), std::move(source)}, join(start, end)));
    }
    if (is_keyword("atomic_add")) {
      take();
      expect_punct("(");
      const Token& name = expect_ident();
      if (is_punct("(")) {
        ViewAccess target{name.text, subscripts()};
        expect_punct(",");
        Expr value = expr();
        expect_punct(")");
        SourceSpan end = expect_punct(";").span;
        return out.push_back(
            Stmt(AssignView{std::move(target), AssignOp::Add, std::move(value), true}, join(start, end)));
      }
      std::string target = name.text;
      expect_punct(",");
      Expr value = expr();
      expect_punct(")");
      SourceSpan end = expect_punct(";").span;
      return out.push_back(
          Stmt(AssignScalar{std::move(target), AssignOp::Add, std::move(value), true}, join(start, end)));
    }
    if (is_keyword("return")) {
      take();
      if (is_keyword("parallel_sum")) {
        take();
        expect_punct("(");
        std::string src = expect_ident().text;
        expect_punct(")");
        SourceSpan end = expect_punct(";").span;
        std::string tmp = fresh_name("_ret");
        out.push_back(Stmt(ParallelSum{tmp, std::move(src)}, join(start, end)));
        out.push_back(Stmt(Return{Expr(ScalarRef{tmp}, join(start, end))}, join(start, end)));
        return;
      }
      Expr value = expr();
      SourceSpan end = expect_punct(";").span;
      return out.push_back(Stmt(Return{std::move(value)}, join(start, end)));
    }
    if (first.kind == TokenKind::Ident && !kKeywords.count(first.text)) {
      std::string name = expect_ident().text;
      if (is_punct("(")) {
        ViewAccess target{name, subscripts()};
        AssignOp op = assign_op();
        Expr value = expr();
        SourceSpan end = expect_punct(";").span;
        return out.push_back(Stmt(AssignView{std::move(target), op, std::move(value), false}, join(start, end)));
      }
      if (is_punct("=") && is_keyword("parallel_sum", 1)) {
        take();
        take();
        expect_punct("(");
        std::string src = expect_ident().text;
        expect_punct(")");
        SourceSpan end = expect_punct(";").span;
        return out.push_back(Stmt(ParallelSum{std::move(name), std::move(src)}, join(start, end)));
      }
      AssignOp op = assign_op();
      Expr value = expr();
      SourceSpan end = expect_punct(";").span;
      return out.push_back(Stmt(AssignScalar{std::move(name), op, std::move(value), false}, join(start, end)));
    }
    fail("unexpected " + describe(first),
         {"'let'", "'parallel_for'", "'if'", "'deep_copy'", "'parallel_sum'", "'atomic_add'", "'return'",
          "identifier"});
  }

  Stmt let_statement() {
    SourceSpan start = expect_keyword("let").span;
    std::string name = expect_ident().text;
    expect_punct(":");
    if (is_keyword("f64")) {
      take();
      std::optional<Expr> init;
      if (is_punct("=")) {
        take();
        init = expr();
      }
      SourceSpan end = expect_punct(";").span;
      return Stmt(DeclScalar{std::move(name), std::move(init)}, join(start, end));
    }
    if (!is_keyword("view")) fail("unexpected " + describe(peek()), {"'f64'", "'view'"});
    SourceSpan type_end;
    ViewType type = view_type(&type_end);
    expect_punct("=");
    expect_keyword("view");
    expect_punct("(");
    if (peek().kind != TokenKind::String) fail("unexpected " + describe(peek()), {"string literal"});
    std::string label = take().text;
    std::vector<Index> extents;
    while (is_punct(",")) {
      take();
      extents.push_back(index());
    }
    expect_punct(")");
    SourceSpan end = expect_punct(";").span;
    views_.insert(name);
    return Stmt(DeclView{std::move(name), std::move(type), std::move(label), std::move(extents)}, join(start, end));
  }

  Stmt parallel_for() {
    SourceSpan start = expect_keyword("parallel_for").span;
    std::string counter = expect_ident().text;
    expect_keyword("in");
    SourceSpan lower_span = peek().span;
    if (expect_int() != 0) throw ParseError(lower_span, "parallel_for ranges start at 0");
    expect_punct("..");
    Index upper = index();
    counters_.push_back(counter);
    SourceSpan end;
    auto body = block(&end);
    counters_.pop_back();
    return Stmt(ParallelFor{std::move(counter), std::move(upper), std::move(body)}, join(start, end));
  }

  std::variant<std::string, Expr> view_or_expr() {
    Expr e = expr();
    if (const auto* s = e.get<ScalarRef>())
      if (views_.count(s->name)) return s->name;
    return e;
  }

  AssignOp assign_op() {
    if (is_punct("=")) return take(), AssignOp::Set;
    if (is_punct("+=")) return take(), AssignOp::Add;
    if (is_punct("-=")) return take(), AssignOp::Sub;
    fail("unexpected " + describe(peek()), {"'='", "'+='", "'-='"});
  }

  CmpOp compare_op() {
    static const std::pair<const char*, CmpOp> kOps[] = {{"!=", CmpOp::Ne}, {"==", CmpOp::Eq}, {"<", CmpOp::Lt},
                                                         {">", CmpOp::Gt},  {"<=", CmpOp::Le}, {">=", CmpOp::Ge}};
    for (const auto& [text, op] : kOps)
      if (is_punct(text)) return take(), op;
    fail("unexpected " + describe(peek()), {"comparison operator"});
  }

  std::string fresh_name(const std::string& base) {
    std::string name = base;
    for (int i = 1; names_.count(name); ++i) name = base + std::to_string(i);
    names_.insert(name);
    return name;
  }

  // --- index expressions ---------------------------------------------------

  std::vector<Index> subscripts() {
    expect_punct("(");
    std::vector<Index> out;
    for (;;) {
      out.push_back(index());
      if (is_punct(",")) {
        take();
        continue;
      }
      break;
    }
    expect_punct(")");
    return out;
  }

  Index index() {
    DepthGuard guard(*this);
    Index lhs = index_term();
    while (is_punct("+") || is_punct("-")) {
      IndexOp op = take().text == "+" ? IndexOp::Add : IndexOp::Sub;
      Index rhs = index_term();
      SourceSpan span = join(lhs.span(), rhs.span());
      lhs = Index(IndexBinary{op, std::move(lhs), std::move(rhs)}, span);
    }
    return lhs;
  }

  Index index_term() {
    Index lhs = index_unary();
    while (is_punct("*")) {
      take();
      Index rhs = index_unary();
      SourceSpan span = join(lhs.span(), rhs.span());
      lhs = Index(IndexBinary{IndexOp::Mul, std::move(lhs), std::move(rhs)}, span);
    }
    return lhs;
  }

  Index index_unary() {
    DepthGuard guard(*this);
    if (is_punct("-")) {
      SourceSpan start = take().span;
      if (peek().kind == TokenKind::Number) {
        const Token& t = take();
        return Index(IntLiteral{-int_value(t)}, join(start, t.span));
      }
      Index operand = index_unary();
      return Index(IndexBinary{IndexOp::Mul, Index(IntLiteral{-1}, start), operand}, join(start, operand.span()));
    }
    return index_primary();
  }

  Index index_primary() {
    const Token& t = peek();
    if (t.kind == TokenKind::Number) {
      take();
      return Index(IntLiteral{int_value(t)}, t.span);
    }
    if (is_punct("(")) {
      take();
      Index inner = index();
      expect_punct(")");
      return inner;
    }
    if (is_keyword("extent")) return Index(extent(), t.span);
    if (t.kind == TokenKind::Ident && !kKeywords.count(t.text)) {
      const Token& name = take();
      names_.insert(name.text);
      if (is_punct("(")) {
        auto subs = subscripts();
        return Index(ViewAccess{name.text, std::move(subs)}, join(name.span, toks_[pos_ - 1].span));
      }
      return Index(Counter{name.text}, name.span);
    }
    fail("unexpected " + describe(t), {"integer", "identifier", "'extent'", "'('"});
  }

  Extent extent() {
    expect_keyword("extent");
    expect_punct("(");
    std::string view = expect_ident().text;
    expect_punct(",");
    SourceSpan dim_span = peek().span;
    std::int64_t dim = expect_int();
    if (dim < 0 || dim > 1) throw ParseError(dim_span, "extent dimension must be 0 or 1");
    expect_punct(")");
    return Extent{std::move(view), static_cast<int>(dim)};
  }

  // --- real expressions ----------------------------------------------------

  Expr expr() {
    DepthGuard guard(*this);
    Expr lhs = term();
    while (is_punct("+") || is_punct("-")) {
      BinaryOp op = take().text == "+" ? BinaryOp::Add : BinaryOp::Sub;
      Expr rhs = term();
      SourceSpan span = join(lhs.span(), rhs.span());
      lhs = Expr(Binary{op, std::move(lhs), std::move(rhs)}, span);
    }
    return lhs;
  }

  Expr term() {
    Expr lhs = unary();
    while (is_punct("*") || is_punct("/")) {
      BinaryOp op = take().text == "*" ? BinaryOp::Mul : BinaryOp::Div;
      Expr rhs = unary();
      SourceSpan span = join(lhs.span(), rhs.span());
      lhs = Expr(Binary{op, std::move(lhs), std::move(rhs)}, span);
    }
    return lhs;
  }

  Expr unary() {
    DepthGuard guard(*this);
    if (is_punct("-")) {
      SourceSpan start = take().span;
      if (peek().kind == TokenKind::Number) {
        const Token& t = take();
        return Expr(Literal{-real_value(t)}, join(start, t.span));
      }
      Expr operand = unary();
      return Expr(Negate{operand}, join(start, operand.span()));
    }
    return primary();
  }

  Expr primary() {
    const Token& t = peek();
    if (t.kind == TokenKind::Number) {
      take();
      return Expr(Literal{real_value(t)}, t.span);
    }
    if (is_punct("(")) {
      take();
      Expr inner = expr();
      expect_punct(")");
      return inner;
    }
    if (is_keyword("extent")) return Expr(extent(), t.span);
    if (t.kind == TokenKind::Ident && !kKeywords.count(t.text)) {
      const Token& name = take();
      names_.insert(name.text);
      if (is_punct("(")) {
        auto subs = subscripts();
        return Expr(ViewAccess{name.text, std::move(subs)}, join(name.span, toks_[pos_ - 1].span));
      }
      for (const std::string& c : counters_)
        if (c == name.text) return Expr(Counter{name.text}, name.span);
      return Expr(ScalarRef{name.text}, name.span);
    }
    fail("unexpected " + describe(t), {"number", "identifier", "'extent'", "'('", "'-'"});
  }
};

}  // namespace

Program parse_unvalidated(std::string_view text) {
  Parser parser(Lexer(text).run());
  return parser.program();
}

Program parse(std::string_view text) {
  Program p = parse_unvalidated(text);
  require_valid(p);
  return p;
}

}  // namespace krn
