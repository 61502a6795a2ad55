#include "unistack/ir.hpp"

#include <algorithm>
#include <cassert>
#include <random>
#include <set>
#include <sstream>

namespace unistack {

const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Const: return "const";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Mul: return "mul";
    case Opcode::Div: return "div";
    case Opcode::Cmp: return "cmp";
    case Opcode::Branch: return "branch";
    case Opcode::Jump: return "jump";
    case Opcode::LoadLocal: return "load-local";
    case Opcode::StoreLocal: return "store-local";
    case Opcode::Call: return "call";
    case Opcode::Return: return "return";
    case Opcode::EqPoint: return "eqpoint";
    case Opcode::Print: return "print";
  }
  return "?";
}

const char* pred_name(CmpPred p) {
  switch (p) {
    case CmpPred::Eq: return "eq";
    case CmpPred::Ne: return "ne";
    case CmpPred::Lt: return "lt";
    case CmpPred::Le: return "le";
    case CmpPred::Gt: return "gt";
    case CmpPred::Ge: return "ge";
  }
  return "?";
}

std::optional<std::size_t> Function::label_index(const std::string& l) const {
  for (const auto& [name, idx] : labels)
    if (name == l) return idx;
  return std::nullopt;
}

const Function* Program::find(const std::string& name) const {
  for (const auto& f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

std::size_t Program::function_index(const std::string& name) const {
  for (std::size_t i = 0; i < functions.size(); ++i)
    if (functions[i].name == name) return i;
  throw ValidationError("unknown function: " + name);
}

ParseError::ParseError(const std::string& msg, int line, int column)
    : std::runtime_error("line " + std::to_string(line) + ", col " +
                         std::to_string(column) + ": " + msg),
      line(line),
      column(column) {}

namespace {

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_ident_char(char c) {
  return is_ident_start(c) || (c >= '0' && c <= '9');
}

// Line-oriented tokenizer/parser.
class Parser {
 public:
  explicit Parser(const std::string& text) : text_(text) {}

  Program parse() {
    Program p;
    skip_blank();
    while (!at_end()) {
      if (peek_word() == "entry") {
        next_word();
        p.entry = expect_ident("entry function name");
        end_line();
      } else {
        p.functions.push_back(parse_function());
      }
      skip_blank();
    }
    if (p.entry.empty()) {
      if (p.find("main"))
        p.entry = "main";
      else if (!p.functions.empty())
        p.entry = p.functions.front().name;
    }
    validate_program(p);
    return p;
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
  int line_ = 1, col_ = 1;

  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(msg, line_, col_);
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char cur() const { return at_end() ? '\0' : text_[pos_]; }

  void advance() {
    if (at_end()) return;
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_spaces() {
    while (!at_end() && (cur() == ' ' || cur() == '\t' || cur() == '\r'))
      advance();
    if (cur() == '#')  // comment to end of line
      while (!at_end() && cur() != '\n') advance();
  }

  void skip_blank() {
    skip_spaces();
    while (cur() == '\n') {
      advance();
      skip_spaces();
    }
  }

  void end_line() {
    skip_spaces();
    if (!at_end() && cur() != '\n') fail("trailing tokens on line");
    if (cur() == '\n') advance();
  }

  std::string peek_word() {
    skip_spaces();
    std::size_t p = pos_;
    std::string w;
    while (p < text_.size() && is_ident_char(text_[p])) w += text_[p++];
    return w;
  }

  std::string next_word() {
    skip_spaces();
    std::string w;
    while (is_ident_char(cur()) || cur() == '-') {
      // '-' allowed inside opcode words like load-local
      if (cur() == '-' && !(pos_ + 1 < text_.size() &&
                            is_ident_char(text_[pos_ + 1]) && !w.empty()))
        break;
      w += cur();
      advance();
    }
    return w;
  }

  std::string expect_ident(const char* what) {
    skip_spaces();
    if (!is_ident_start(cur())) fail(std::string("expected ") + what);
    std::string w;
    while (is_ident_char(cur())) {
      w += cur();
      advance();
    }
    return w;
  }

  std::int64_t expect_int() {
    skip_spaces();
    bool neg = false;
    if (cur() == '-') {
      neg = true;
      advance();
    }
    if (!(cur() >= '0' && cur() <= '9')) fail("expected integer");
    std::uint64_t v = 0;
    while (cur() >= '0' && cur() <= '9') {
      v = v * 10 + static_cast<std::uint64_t>(cur() - '0');
      advance();
    }
    return neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
  }

  void expect_char(char c) {
    skip_spaces();
    if (cur() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  bool accept_char(char c) {
    skip_spaces();
    if (cur() != c) return false;
    advance();
    return true;
  }

  Operand parse_operand() {
    skip_spaces();
    if (cur() == '-' || (cur() >= '0' && cur() <= '9'))
      return Operand::literal(expect_int());
    return Operand::value(expect_ident("value id or literal"));
  }

  Function parse_function() {
    if (next_word() != "fn") fail("expected 'fn'");
    Function f;
    f.name = expect_ident("function name");
    expect_char('(');
    if (!accept_char(')')) {
      do {
        f.params.push_back(expect_ident("parameter name"));
      } while (accept_char(','));
      expect_char(')');
    }
    expect_char('{');
    end_line();
    for (;;) {
      skip_blank();
      if (at_end()) fail("unterminated function body");
      if (accept_char('}')) {
        end_line();
        break;
      }
      parse_line(f);
    }
    return f;
  }

  void parse_line(Function& f) {
    skip_spaces();
    int start_line = line_, start_col = col_;
    std::string w = next_word();
    if (w.empty()) fail("expected instruction");
    skip_spaces();
    if (cur() == ':') {  // label
      advance();
      f.labels.emplace_back(w, f.body.size());
      end_line();
      return;
    }
    if (w == "local") {
      LocalDecl d;
      d.name = expect_ident("local name");
      std::int64_t sz = expect_int();
      if (sz <= 0 || sz % 8 != 0)
        throw ParseError("local size must be a positive multiple of 8",
                         start_line, start_col);
      d.size = static_cast<std::uint32_t>(sz);
      f.locals.push_back(d);
      end_line();
      return;
    }

    Instruction in;
    if (cur() == '=') {
      advance();
      in.result = w;
      w = next_word();
      if (w.empty()) fail("expected opcode after '='");
    }

    if (w == "const") {
      in.op = Opcode::Const;
      in.args.push_back(Operand::literal(expect_int()));
      require_result(in, start_line, start_col);
    } else if (w == "add" || w == "sub" || w == "mul" || w == "div") {
      in.op = w == "add"   ? Opcode::Add
              : w == "sub" ? Opcode::Sub
              : w == "mul" ? Opcode::Mul
                           : Opcode::Div;
      in.args.push_back(parse_operand());
      expect_char(',');
      in.args.push_back(parse_operand());
      require_result(in, start_line, start_col);
    } else if (w == "cmp") {
      in.op = Opcode::Cmp;
      std::string pr = expect_ident("comparison predicate");
      if (pr == "eq")
        in.pred = CmpPred::Eq;
      else if (pr == "ne")
        in.pred = CmpPred::Ne;
      else if (pr == "lt")
        in.pred = CmpPred::Lt;
      else if (pr == "le")
        in.pred = CmpPred::Le;
      else if (pr == "gt")
        in.pred = CmpPred::Gt;
      else if (pr == "ge")
        in.pred = CmpPred::Ge;
      else
        fail("unknown predicate: " + pr);
      in.args.push_back(parse_operand());
      expect_char(',');
      in.args.push_back(parse_operand());
      require_result(in, start_line, start_col);
    } else if (w == "branch") {
      in.op = Opcode::Branch;
      in.args.push_back(parse_operand());
      expect_char(',');
      in.label_a = expect_ident("label");
      expect_char(',');
      in.label_b = expect_ident("label");
      forbid_result(in, start_line, start_col);
    } else if (w == "jump") {
      in.op = Opcode::Jump;
      in.label_a = expect_ident("label");
      forbid_result(in, start_line, start_col);
    } else if (w == "load-local") {
      in.op = Opcode::LoadLocal;
      in.local = expect_ident("local name");
      require_result(in, start_line, start_col);
    } else if (w == "store-local") {
      in.op = Opcode::StoreLocal;
      in.local = expect_ident("local name");
      expect_char(',');
      in.args.push_back(parse_operand());
      forbid_result(in, start_line, start_col);
    } else if (w == "call") {
      in.op = Opcode::Call;
      in.callee = expect_ident("call target");
      expect_char('(');
      if (!accept_char(')')) {
        do {
          in.args.push_back(parse_operand());
        } while (accept_char(','));
        expect_char(')');
      }
    } else if (w == "return") {
      in.op = Opcode::Return;
      in.args.push_back(parse_operand());
      forbid_result(in, start_line, start_col);
    } else if (w == "eqpoint") {
      in.op = Opcode::EqPoint;
      in.eq_id = expect_int();
      forbid_result(in, start_line, start_col);
    } else if (w == "print") {
      in.op = Opcode::Print;
      in.args.push_back(parse_operand());
      forbid_result(in, start_line, start_col);
    } else {
      throw ParseError("unknown opcode: " + w, start_line, start_col);
    }
    f.body.push_back(std::move(in));
    end_line();
  }

  void require_result(const Instruction& in, int l, int c) {
    if (in.result.empty())
      throw ParseError(std::string(opcode_name(in.op)) + " requires a result",
                       l, c);
  }
  void forbid_result(const Instruction& in, int l, int c) {
    if (!in.result.empty())
      throw ParseError(std::string(opcode_name(in.op)) +
                           " does not define a value",
                       l, c);
  }
};

void print_operand(std::ostream& os, const Operand& o) {
  if (o.is_imm)
    os << o.imm;
  else
    os << o.id;
}

}  // namespace

Program parse_program(const std::string& text) { return Parser(text).parse(); }

std::string print_program(const Program& p) {
  std::ostringstream os;
  if (!p.functions.empty() && p.entry != p.functions.front().name)
    os << "entry " << p.entry << "\n\n";
  bool first = true;
  for (const auto& f : p.functions) {
    if (!first) os << "\n";
    first = false;
    os << "fn " << f.name << "(";
    for (std::size_t i = 0; i < f.params.size(); ++i)
      os << (i ? ", " : "") << f.params[i];
    os << ") {\n";
    for (const auto& l : f.locals)
      os << "  local " << l.name << " " << l.size << "\n";
    std::size_t li = 0;  // labels are sorted by index in valid programs
    auto labels = f.labels;
    std::stable_sort(labels.begin(), labels.end(),
                     [](const auto& a, const auto& b) {
                       return a.second < b.second;
                     });
    for (std::size_t i = 0; i <= f.body.size(); ++i) {
      while (li < labels.size() && labels[li].second == i)
        os << labels[li++].first << ":\n";
      if (i == f.body.size()) break;
      const Instruction& in = f.body[i];
      os << "  ";
      if (!in.result.empty()) os << in.result << " = ";
      switch (in.op) {
        case Opcode::Const:
          os << "const " << in.args[0].imm;
          break;
        case Opcode::Add:
        case Opcode::Sub:
        case Opcode::Mul:
        case Opcode::Div:
          os << opcode_name(in.op) << " ";
          print_operand(os, in.args[0]);
          os << ", ";
          print_operand(os, in.args[1]);
          break;
        case Opcode::Cmp:
          os << "cmp " << pred_name(in.pred) << " ";
          print_operand(os, in.args[0]);
          os << ", ";
          print_operand(os, in.args[1]);
          break;
        case Opcode::Branch:
          os << "branch ";
          print_operand(os, in.args[0]);
          os << ", " << in.label_a << ", " << in.label_b;
          break;
        case Opcode::Jump:
          os << "jump " << in.label_a;
          break;
        case Opcode::LoadLocal:
          os << "load-local " << in.local;
          break;
        case Opcode::StoreLocal:
          os << "store-local " << in.local << ", ";
          print_operand(os, in.args[0]);
          break;
        case Opcode::Call:
          os << "call " << in.callee << "(";
          for (std::size_t a = 0; a < in.args.size(); ++a) {
            if (a) os << ", ";
            print_operand(os, in.args[a]);
          }
          os << ")";
          break;
        case Opcode::Return:
          os << "return ";
          print_operand(os, in.args[0]);
          break;
        case Opcode::EqPoint:
          os << "eqpoint " << in.eq_id;
          break;
        case Opcode::Print:
          os << "print ";
          print_operand(os, in.args[0]);
          break;
      }
      os << "\n";
    }
    os << "}\n";
  }
  return os.str();
}

void validate_program(const Program& p) {
  if (p.functions.empty()) throw ValidationError("program has no functions");
  std::set<std::string> names;
  for (const auto& f : p.functions)
    if (!names.insert(f.name).second)
      throw ValidationError("duplicate function name: " + f.name);
  if (!p.find(p.entry))
    throw ValidationError("entry function not found: " + p.entry);

  for (const auto& f : p.functions) {
    std::set<std::string> locals;
    for (const auto& l : f.locals)
      if (!locals.insert(l.name).second)
        throw ValidationError("duplicate local " + l.name + " in " + f.name);
    std::set<std::string> labels;
    for (const auto& [l, idx] : f.labels) {
      if (!labels.insert(l).second)
        throw ValidationError("duplicate label " + l + " in " + f.name);
      if (idx > f.body.size())
        throw ValidationError("label " + l + " out of range in " + f.name);
    }
    std::set<std::string> defined(f.params.begin(), f.params.end());
    std::set<std::int64_t> eq_ids;
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      const Instruction& in = f.body[i];
      for (const auto& o : in.args)
        if (!o.is_imm && !defined.count(o.id))
          throw ValidationError("use of undefined value " + o.id + " in " +
                                f.name + " at instruction " +
                                std::to_string(i));
      if (!in.result.empty()) defined.insert(in.result);
      if (in.op == Opcode::EqPoint && !eq_ids.insert(in.eq_id).second)
        throw ValidationError("duplicate equivalence point id " +
                              std::to_string(in.eq_id) + " in " + f.name);
      if (in.op == Opcode::Call) {
        const Function* g = p.find(in.callee);
        if (!g)
          throw ValidationError("call to undefined function " + in.callee +
                                " in " + f.name + " at instruction " +
                                std::to_string(i));
        if (g->params.size() != in.args.size())
          throw ValidationError("call to " + in.callee + " with " +
                                std::to_string(in.args.size()) +
                                " args, expected " +
                                std::to_string(g->params.size()));
      }
      if ((in.op == Opcode::LoadLocal || in.op == Opcode::StoreLocal) &&
          !locals.count(in.local))
        throw ValidationError("unknown local " + in.local + " in " + f.name);
      if (in.op == Opcode::Branch &&
          (!f.label_index(in.label_a) || !f.label_index(in.label_b)))
        throw ValidationError("branch to unknown label in " + f.name);
      if (in.op == Opcode::Jump && !f.label_index(in.label_a))
        throw ValidationError("jump to unknown label in " + f.name);
    }
    if (f.body.empty() || (f.body.back().op != Opcode::Return &&
                           f.body.back().op != Opcode::Jump &&
                           f.body.back().op != Opcode::Branch))
      throw ValidationError("function " + f.name +
                            " must end with return, jump or branch");
  }
}

namespace {

class Generator {
 public:
  explicit Generator(const GeneratorConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  Program gen() {
    check_range(cfg_.function_count, "function-count");
    check_range(cfg_.call_depth, "call-depth");
    check_range(cfg_.live_pressure, "live-value-pressure");
    check_range(cfg_.loop_iters, "loop-iteration");
    if (cfg_.live_pressure.lo < 1)
      throw ValidationError("infeasible config: pressure range below 1");
    if (cfg_.call_depth.lo < 1)
      throw ValidationError("infeasible config: call depth below 1");

    std::uint32_t depth = pick(cfg_.call_depth);
    std::uint32_t nfun = std::max(pick(cfg_.function_count), depth);

    Program p;
    p.entry = "main";
    for (std::uint32_t i = 0; i < nfun; ++i) {
      std::string name = i == 0 ? "main" : "f" + std::to_string(i);
      // The call chain main -> f1 -> ... realizes the configured depth;
      // remaining functions are leaf helpers invoked from main.
      std::string callee = i + 1 < depth ? "f" + std::to_string(i + 1) : "";
      std::vector<std::string> helpers;
      if (i == 0)
        for (std::uint32_t h = depth; h < nfun; ++h)
          helpers.push_back("f" + std::to_string(h));
      p.functions.push_back(gen_function(name, callee, helpers));
    }
    validate_program(p);
    return p;
  }

 private:
  const GeneratorConfig& cfg_;
  std::mt19937_64 rng_;

  std::uint32_t pick(Range r) {
    return r.lo + static_cast<std::uint32_t>(rng_() % (r.hi - r.lo + 1));
  }
  std::int64_t small_const() { return static_cast<std::int64_t>(rng_() % 97); }

  static void check_range(Range r, const char* what) {
    if (r.hi < r.lo)
      throw ValidationError(std::string("infeasible config: empty ") + what +
                            " range");
  }

  Function gen_function(const std::string& name, const std::string& callee,
                        const std::vector<std::string>& helpers) {
    Function f;
    f.name = name;
    f.params = {"p0"};
    std::uint32_t k = pick(cfg_.live_pressure);
    std::uint32_t iters = pick(cfg_.loop_iters);
    std::int64_t eq = 0;
    int vn = 0;
    auto fresh = [&] { return "v" + std::to_string(vn++); };
    auto emit = [&](Instruction in) { f.body.push_back(std::move(in)); };
    auto bin = [&](Opcode op, std::string d, Operand a, Operand b) {
      Instruction in;
      in.op = op;
      in.result = std::move(d);
      in.args = {std::move(a), std::move(b)};
      emit(std::move(in));
    };

    std::string sum;  // running result value
    if (k >= 5) {
      // Loop shape: pads + {acc, i, n} are live through the loop and the
      // compare result peaks pressure at exactly k on the branch.
      std::uint32_t pads = k - 4;
      std::vector<std::string> pad;
      for (std::uint32_t j = 0; j < pads; ++j) {
        pad.push_back(fresh());
        bin(Opcode::Add, pad.back(), Operand::value("p0"),
            Operand::literal(small_const()));
      }
      std::string acc = fresh(), iv = fresh(), n = fresh();
      bin(Opcode::Add, acc, Operand::value("p0"), Operand::literal(1));
      Instruction ci;
      ci.op = Opcode::Const;
      ci.result = iv;
      ci.args = {Operand::literal(0)};
      emit(ci);
      ci.result = n;
      ci.args = {Operand::literal(static_cast<std::int64_t>(iters))};
      emit(ci);

      f.labels.emplace_back("L0", f.body.size());
      Instruction ep;
      ep.op = Opcode::EqPoint;
      ep.eq_id = eq++;
      emit(ep);
      std::string t = fresh();
      Instruction cmp;
      cmp.op = Opcode::Cmp;
      cmp.pred = CmpPred::Ge;
      cmp.result = t;
      cmp.args = {Operand::value(iv), Operand::value(n)};
      emit(cmp);
      Instruction br;
      br.op = Opcode::Branch;
      br.args = {Operand::value(t)};
      br.label_a = "L2";
      br.label_b = "L1";
      emit(br);
      f.labels.emplace_back("L1", f.body.size());
      for (const auto& pj : pad) {
        Opcode op = (rng_() % 3 == 0) ? Opcode::Sub : Opcode::Add;
        bin(op, acc, Operand::value(acc), Operand::value(pj));
      }
      bin(Opcode::Add, iv, Operand::value(iv), Operand::literal(1));
      Instruction jmp;
      jmp.op = Opcode::Jump;
      jmp.label_a = "L0";
      emit(jmp);
      f.labels.emplace_back("L2", f.body.size());
      sum = acc;
    } else {
      // Straight-line shape: k pads all live across one equivalence point,
      // then folded down.
      std::vector<std::string> pad;
      for (std::uint32_t j = 0; j < k; ++j) {
        pad.push_back(fresh());
        bin(Opcode::Add, pad.back(), Operand::value("p0"),
            Operand::literal(small_const()));
      }
      Instruction ep;
      ep.op = Opcode::EqPoint;
      ep.eq_id = eq++;
      emit(ep);
      std::string s = fresh();
      bin(Opcode::Add, s, Operand::value(pad[0]),
          pad.size() > 1 ? Operand::value(pad[1]) : Operand::literal(1));
      for (std::size_t j = 2; j < pad.size(); ++j)
        bin(Opcode::Add, s, Operand::value(s), Operand::value(pad[j]));
      sum = s;
    }

    bool low_pressure = k <= 2;
    auto call_one = [&](const std::string& target) {
      Instruction c;
      c.op = Opcode::Call;
      c.callee = target;
      // Keep the callee argument small so bounded loops stay bounded.
      std::string arg = fresh();
      Instruction m;
      m.op = Opcode::Div;
      m.result = arg;
      m.args = {Operand::value(sum), Operand::literal(7)};
      emit(m);
      std::string r = fresh();
      c.result = r;
      c.args = {Operand::value(arg)};
      emit(c);
      Instruction ep;
      ep.op = Opcode::EqPoint;
      ep.eq_id = eq++;
      emit(ep);
      if (low_pressure) {
        sum = r;
      } else {
        std::string s2 = fresh();
        bin(Opcode::Add, s2, Operand::value(r), Operand::value(sum));
        sum = s2;
      }
    };
    if (!callee.empty()) call_one(callee);
    for (const auto& h : helpers) call_one(h);

    if (!low_pressure && rng_() % 2 == 0) {
      // Local traffic, including a redundant reload for the load pass.
      f.locals.push_back({"c0", 8});
      Instruction st;
      st.op = Opcode::StoreLocal;
      st.local = "c0";
      st.args = {Operand::value(sum)};
      emit(st);
      std::string a = fresh(), b = fresh(), s2 = fresh();
      Instruction ld;
      ld.op = Opcode::LoadLocal;
      ld.local = "c0";
      ld.result = a;
      emit(ld);
      ld.result = b;
      emit(ld);
      bin(Opcode::Add, s2, Operand::value(a), Operand::value(b));
      sum = s2;
    }

    Instruction pr;
    pr.op = Opcode::Print;
    pr.args = {Operand::value(sum)};
    emit(pr);
    Instruction ret;
    ret.op = Opcode::Return;
    ret.args = {Operand::value(sum)};
    emit(ret);
    return f;
  }
};

}  // namespace

Program generate_program(const GeneratorConfig& cfg) {
  return Generator(cfg).gen();
}

Program eliminate_redundant_loads(const Program& p) {
  Program out = p;
  for (auto& f : out.functions) {
    // Count definitions; only single-definition load results can be renamed.
    std::map<std::string, int> defs;
    for (const auto& in : f.body)
      if (!in.result.empty()) ++defs[in.result];

    // Basic block boundaries: label targets and instructions after control
    // transfer.
    std::vector<bool> leader(f.body.size() + 1, false);
    leader[0] = true;
    for (const auto& [l, idx] : f.labels) leader[idx] = true;
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      Opcode op = f.body[i].op;
      if (op == Opcode::Branch || op == Opcode::Jump || op == Opcode::Return)
        leader[i + 1] = true;
    }

    std::map<std::string, std::string> rename;  // deleted load result -> value
    std::vector<bool> drop(f.body.size(), false);
    std::map<std::string, std::string> avail;  // local -> known value id
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      if (leader[i]) avail.clear();
      Instruction& in = f.body[i];
      for (auto& o : in.args) {
        if (o.is_imm) continue;
        auto it = rename.find(o.id);
        if (it != rename.end()) o.id = it->second;
      }
      if (in.op == Opcode::StoreLocal) {
        if (!in.args[0].is_imm && defs[in.args[0].id] <= 1)
          avail[in.local] = in.args[0].id;
        else
          avail.erase(in.local);
      } else if (in.op == Opcode::LoadLocal) {
        auto it = avail.find(in.local);
        if (it != avail.end() && defs[in.result] == 1) {
          rename[in.result] = it->second;
          drop[i] = true;
        } else if (defs[in.result] == 1) {
          avail[in.local] = in.result;
        }
      } else if (!in.result.empty()) {
        // A redefinition invalidates any forwarding through that name.
        for (auto it = avail.begin(); it != avail.end();) {
          if (it->second == in.result)
            it = avail.erase(it);
          else
            ++it;
        }
      }
    }

    if (rename.empty()) continue;
    std::vector<Instruction> body;
    std::vector<std::pair<std::string, std::size_t>> labels = f.labels;
    std::vector<std::size_t> shift(f.body.size() + 1, 0);
    std::size_t removed = 0;
    for (std::size_t i = 0; i < f.body.size(); ++i) {
      shift[i] = removed;
      if (drop[i]) {
        ++removed;
        continue;
      }
      body.push_back(f.body[i]);
    }
    shift[f.body.size()] = removed;
    for (auto& [l, idx] : labels) idx -= shift[idx];
    f.body = std::move(body);
    f.labels = std::move(labels);
  }
  validate_program(out);
  return out;
}

std::size_t count_load_locals(const Program& p) {
  std::size_t n = 0;
  for (const auto& f : p.functions)
    for (const auto& in : f.body)
      if (in.op == Opcode::LoadLocal) ++n;
  return n;
}

}  // namespace unistack
