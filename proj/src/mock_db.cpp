#include "dnsexfil/mock_db.hpp"

#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>

#include "dnsexfil/exfil_codec.hpp"

namespace dnsexfil::sim {

namespace {

// ---------------------------------------------------------------------------
// errors

struct DbError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] void unsupported(const std::string& token) {
    throw DbError("Unsupported token '" + token + "'");
}

// ---------------------------------------------------------------------------
// values

struct Value {
    enum class Kind { integer, text } kind = Kind::text;
    std::int64_t i = 0;
    std::string s;

    static Value of_int(std::int64_t v) { return Value{Kind::integer, v, {}}; }
    static Value of_text(std::string v) { return Value{Kind::text, 0, std::move(v)}; }
};

std::string to_text(const Value& v) {
    if (v.kind == Value::Kind::integer) return std::to_string(v.i);
    return v.s;
}

std::optional<std::int64_t> try_int(const Value& v) {
    if (v.kind == Value::Kind::integer) return v.i;
    if (v.s.empty()) return std::nullopt;
    std::size_t pos = 0;
    bool neg = v.s[0] == '-';
    if (neg) pos = 1;
    if (pos >= v.s.size()) return std::nullopt;
    std::int64_t out = 0;
    for (; pos < v.s.size(); ++pos) {
        char c = v.s[pos];
        if (c < '0' || c > '9') return std::nullopt;
        out = out * 10 + (c - '0');
    }
    return neg ? -out : out;
}

std::int64_t need_int(const Value& v, const char* what) {
    auto n = try_int(v);
    if (!n) throw DbError(std::string("expected an integer for ") + what);
    return *n;
}

bool truthy(const Value& v) {
    return need_int(v, "a condition") != 0;
}

// ---------------------------------------------------------------------------
// lexer

enum class Tok {
    end, ident, variable, integer, text,
    lparen, rparen, comma, semicolon, dot,
    plus, minus, star, slash, concat,
    eq, ne, lt, gt, le, ge,
};

struct Token {
    Tok kind = Tok::end;
    std::string text;    // ident (original case), string content, or spelling
    std::int64_t ival = 0;
};

std::string upper(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) out.push_back(c >= 'a' && c <= 'z' ? char(c - 'a' + 'A') : c);
    return out;
}

class Lexer {
public:
    explicit Lexer(std::string_view sql) : sql_(sql) { advance(); }

    const Token& peek() const { return tok_; }

    Token take() {
        Token t = std::move(tok_);
        advance();
        return t;
    }

    bool at(Tok k) const { return tok_.kind == k; }

    bool at_keyword(std::string_view kw) const {
        return tok_.kind == Tok::ident && upper(tok_.text) == kw;
    }

    bool accept_keyword(std::string_view kw) {
        if (!at_keyword(kw)) return false;
        advance();
        return true;
    }

    void expect(Tok k, const char* what) {
        if (tok_.kind != k) unsupported(tok_.kind == Tok::end ? "<end>" : tok_.text);
        (void)what;
        advance();
    }

private:
    void advance() {
        while (pos_ < sql_.size() &&
               (sql_[pos_] == ' ' || sql_[pos_] == '\t' || sql_[pos_] == '\n' ||
                sql_[pos_] == '\r')) {
            ++pos_;
        }
        tok_ = Token{};
        if (pos_ >= sql_.size()) {
            tok_.kind = Tok::end;
            tok_.text = "<end>";
            return;
        }
        char c = sql_[pos_];
        if (c == '\'') {
            ++pos_;
            std::string content;
            for (;;) {
                if (pos_ >= sql_.size()) throw DbError("unterminated string literal");
                if (sql_[pos_] == '\'') {
                    if (pos_ + 1 < sql_.size() && sql_[pos_ + 1] == '\'') {
                        content.push_back('\'');
                        pos_ += 2;
                        continue;
                    }
                    ++pos_;
                    break;
                }
                content.push_back(sql_[pos_++]);
            }
            tok_.kind = Tok::text;
            tok_.text = std::move(content);
            return;
        }
        if (c >= '0' && c <= '9') {
            std::int64_t v = 0;
            while (pos_ < sql_.size() && sql_[pos_] >= '0' && sql_[pos_] <= '9') {
                v = v * 10 + (sql_[pos_++] - '0');
            }
            tok_.kind = Tok::integer;
            tok_.ival = v;
            tok_.text = std::to_string(v);
            return;
        }
        auto ident_char = [](char ch) {
            return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                   (ch >= '0' && ch <= '9') || ch == '_' || ch == '$';
        };
        if (c == '@') {
            ++pos_;
            std::string name;
            while (pos_ < sql_.size() && ident_char(sql_[pos_])) name.push_back(sql_[pos_++]);
            if (name.empty()) unsupported("@");
            tok_.kind = Tok::variable;
            tok_.text = upper(name);
            return;
        }
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
            std::string name;
            while (pos_ < sql_.size() && ident_char(sql_[pos_])) name.push_back(sql_[pos_++]);
            tok_.kind = Tok::ident;
            tok_.text = std::move(name);
            return;
        }
        auto two = [&](char a, char b) {
            return c == a && pos_ + 1 < sql_.size() && sql_[pos_ + 1] == b;
        };
        if (two('|', '|')) { tok_.kind = Tok::concat; tok_.text = "||"; pos_ += 2; return; }
        if (two('<', '=')) { tok_.kind = Tok::le; tok_.text = "<="; pos_ += 2; return; }
        if (two('>', '=')) { tok_.kind = Tok::ge; tok_.text = ">="; pos_ += 2; return; }
        if (two('<', '>')) { tok_.kind = Tok::ne; tok_.text = "<>"; pos_ += 2; return; }
        if (two('!', '=')) { tok_.kind = Tok::ne; tok_.text = "!="; pos_ += 2; return; }
        ++pos_;
        switch (c) {
        case '(': tok_.kind = Tok::lparen; break;
        case ')': tok_.kind = Tok::rparen; break;
        case ',': tok_.kind = Tok::comma; break;
        case ';': tok_.kind = Tok::semicolon; break;
        case '.': tok_.kind = Tok::dot; break;
        case '+': tok_.kind = Tok::plus; break;
        case '-': tok_.kind = Tok::minus; break;
        case '*': tok_.kind = Tok::star; break;
        case '/': tok_.kind = Tok::slash; break;
        case '=': tok_.kind = Tok::eq; break;
        case '<': tok_.kind = Tok::lt; break;
        case '>': tok_.kind = Tok::gt; break;
        default: unsupported(std::string(1, c));
        }
        tok_.text = std::string(1, c);
    }

    std::string_view sql_;
    std::size_t pos_ = 0;
    Token tok_;
};

// ---------------------------------------------------------------------------
// AST

struct SelectBody;

struct Expr {
    enum class Kind {
        int_lit, str_lit, variable, column,
        binop,   // text = operator spelling
        negate,
        func,    // text = canonical upper-cased dotted name
        method,  // text = method name; args[0] = receiver
        subquery,
        count_star,
    } kind = Kind::int_lit;

    std::int64_t ival = 0;
    std::string text;
    std::vector<std::unique_ptr<Expr>> args;
    std::unique_ptr<SelectBody> select;
};

using ExprPtr = std::unique_ptr<Expr>;

struct SelectBody {
    bool star = false;
    std::optional<std::int64_t> top;
    std::vector<ExprPtr> items;
    std::string from_table; // original spelling; empty = projected constants
    ExprPtr where;
    std::optional<std::pair<std::int64_t, std::int64_t>> limit;
    std::unique_ptr<SelectBody> union_next;
};

struct Statement {
    enum class Kind { declare_var, assign, select, exec_expr, exec_proc, copy_from } kind;
    std::string name; // variable, procedure, or copy target
    ExprPtr expr;     // assigned value / dynamic sql / proc argument / copy source
    std::unique_ptr<SelectBody> select;
};

// ---------------------------------------------------------------------------
// parser

class Parser {
public:
    explicit Parser(std::string_view sql) : lex_(sql) {}

    std::vector<Statement> parse_batch() {
        std::vector<Statement> stmts;
        while (!lex_.at(Tok::end)) {
            if (lex_.at(Tok::semicolon)) {
                lex_.take();
                continue;
            }
            stmts.push_back(parse_statement());
            if (!lex_.at(Tok::end)) lex_.expect(Tok::semicolon, ";");
        }
        return stmts;
    }

private:
    Statement parse_statement() {
        if (lex_.accept_keyword("DECLARE")) return parse_declare();
        if (lex_.accept_keyword("SELECT")) return parse_select_statement();
        if (lex_.accept_keyword("EXEC") || lex_.accept_keyword("EXECUTE")) return parse_exec();
        if (lex_.accept_keyword("COPY")) return parse_copy();
        if (lex_.at(Tok::ident)) {
            // Bare procedure call, the form dynamic SQL arrives in:
            //   master..xp_dirtree '<arg>'
            std::string name = parse_dotted_name();
            if (lex_.at(Tok::text)) {
                Statement s;
                s.kind = Statement::Kind::exec_proc;
                s.name = std::move(name);
                auto arg = std::make_unique<Expr>();
                arg->kind = Expr::Kind::str_lit;
                arg->text = lex_.take().text;
                s.expr = std::move(arg);
                return s;
            }
            unsupported(name);
        }
        unsupported(lex_.peek().text);
    }

    Statement parse_declare() {
        if (!lex_.at(Tok::variable)) unsupported(lex_.peek().text);
        Statement s;
        s.kind = Statement::Kind::declare_var;
        s.name = lex_.take().text;
        if (!lex_.accept_keyword("VARCHAR")) unsupported(lex_.peek().text);
        lex_.expect(Tok::lparen, "(");
        if (!lex_.at(Tok::integer)) unsupported(lex_.peek().text);
        lex_.take();
        lex_.expect(Tok::rparen, ")");
        return s;
    }

    Statement parse_select_statement() {
        if (lex_.at(Tok::variable)) {
            Statement s;
            s.kind = Statement::Kind::assign;
            s.name = lex_.take().text;
            lex_.expect(Tok::eq, "=");
            s.expr = parse_expr();
            return s;
        }
        Statement s;
        s.kind = Statement::Kind::select;
        s.select = parse_select_body();
        return s;
    }

    Statement parse_exec() {
        Statement s;
        if (lex_.at(Tok::lparen)) {
            lex_.take();
            s.kind = Statement::Kind::exec_expr;
            s.expr = parse_expr();
            lex_.expect(Tok::rparen, ")");
            return s;
        }
        s.kind = Statement::Kind::exec_proc;
        s.name = parse_dotted_name();
        if (lex_.at(Tok::text)) {
            auto arg = std::make_unique<Expr>();
            arg->kind = Expr::Kind::str_lit;
            arg->text = lex_.take().text;
            s.expr = std::move(arg);
        }
        return s;
    }

    Statement parse_copy() {
        Statement s;
        s.kind = Statement::Kind::copy_from;
        if (!lex_.at(Tok::ident)) unsupported(lex_.peek().text);
        s.name = lex_.take().text;
        if (!lex_.accept_keyword("FROM")) unsupported(lex_.peek().text);
        s.expr = parse_expr();
        return s;
    }

    // SELECT already consumed.
    std::unique_ptr<SelectBody> parse_select_body() {
        auto body = std::make_unique<SelectBody>();
        if (lex_.accept_keyword("TOP")) {
            if (!lex_.at(Tok::integer)) unsupported(lex_.peek().text);
            body->top = lex_.take().ival;
        }
        if (lex_.at(Tok::star)) {
            lex_.take();
            body->star = true;
        } else {
            body->items.push_back(parse_expr());
            while (lex_.at(Tok::comma)) {
                lex_.take();
                body->items.push_back(parse_expr());
            }
        }
        if (lex_.accept_keyword("FROM")) {
            body->from_table = parse_dotted_name();
        }
        if (lex_.accept_keyword("WHERE")) {
            body->where = parse_expr();
        }
        if (lex_.accept_keyword("LIMIT")) {
            if (!lex_.at(Tok::integer)) unsupported(lex_.peek().text);
            std::int64_t a = lex_.take().ival;
            lex_.expect(Tok::comma, ",");
            if (!lex_.at(Tok::integer)) unsupported(lex_.peek().text);
            std::int64_t b = lex_.take().ival;
            body->limit = {a, b};
        }
        if (lex_.accept_keyword("UNION")) {
            if (!lex_.accept_keyword("SELECT")) unsupported(lex_.peek().text);
            body->union_next = parse_select_body();
        }
        return body;
    }

    std::string parse_dotted_name() {
        if (!lex_.at(Tok::ident)) unsupported(lex_.peek().text);
        std::string name = lex_.take().text;
        while (lex_.at(Tok::dot)) {
            lex_.take();
            if (lex_.at(Tok::dot)) { // the master..xp_dirtree form
                lex_.take();
                name += "..";
            } else {
                name += ".";
            }
            if (!lex_.at(Tok::ident)) unsupported(lex_.peek().text);
            name += lex_.take().text;
        }
        return name;
    }

    // precedence: OR < AND < NOT < comparison < additive < multiplicative
    ExprPtr parse_expr() { return parse_or(); }

    ExprPtr make_binop(std::string op, ExprPtr lhs, ExprPtr rhs) {
        auto e = std::make_unique<Expr>();
        e->kind = Expr::Kind::binop;
        e->text = std::move(op);
        e->args.push_back(std::move(lhs));
        e->args.push_back(std::move(rhs));
        return e;
    }

    ExprPtr parse_or() {
        auto lhs = parse_and();
        while (lex_.accept_keyword("OR")) lhs = make_binop("OR", std::move(lhs), parse_and());
        return lhs;
    }

    ExprPtr parse_and() {
        auto lhs = parse_not();
        while (lex_.accept_keyword("AND")) lhs = make_binop("AND", std::move(lhs), parse_not());
        return lhs;
    }

    ExprPtr parse_not() {
        if (lex_.accept_keyword("NOT")) {
            auto e = std::make_unique<Expr>();
            e->kind = Expr::Kind::func;
            e->text = "NOT";
            e->args.push_back(parse_not());
            return e;
        }
        return parse_comparison();
    }

    ExprPtr parse_comparison() {
        auto lhs = parse_additive();
        switch (lex_.peek().kind) {
        case Tok::eq: case Tok::ne: case Tok::lt: case Tok::gt: case Tok::le: case Tok::ge: {
            std::string op = lex_.take().text;
            return make_binop(std::move(op), std::move(lhs), parse_additive());
        }
        default:
            return lhs;
        }
    }

    ExprPtr parse_additive() {
        auto lhs = parse_multiplicative();
        for (;;) {
            if (lex_.at(Tok::plus) || lex_.at(Tok::minus) || lex_.at(Tok::concat)) {
                std::string op = lex_.take().text;
                lhs = make_binop(std::move(op), std::move(lhs), parse_multiplicative());
            } else {
                return lhs;
            }
        }
    }

    ExprPtr parse_multiplicative() {
        auto lhs = parse_unary();
        for (;;) {
            if (lex_.at(Tok::star) || lex_.at(Tok::slash)) {
                std::string op = lex_.take().text;
                lhs = make_binop(std::move(op), std::move(lhs), parse_unary());
            } else {
                return lhs;
            }
        }
    }

    ExprPtr parse_unary() {
        if (lex_.at(Tok::minus)) {
            lex_.take();
            auto e = std::make_unique<Expr>();
            e->kind = Expr::Kind::negate;
            e->args.push_back(parse_unary());
            return e;
        }
        return parse_postfix();
    }

    ExprPtr parse_postfix() {
        auto e = parse_primary();
        // method-call chaining: HTTPURITYPE('u').GETCLOB()
        while (lex_.at(Tok::dot)) {
            lex_.take();
            if (!lex_.at(Tok::ident)) unsupported(lex_.peek().text);
            std::string method = upper(lex_.take().text);
            lex_.expect(Tok::lparen, "(");
            lex_.expect(Tok::rparen, ")");
            auto m = std::make_unique<Expr>();
            m->kind = Expr::Kind::method;
            m->text = std::move(method);
            m->args.push_back(std::move(e));
            e = std::move(m);
        }
        return e;
    }

    ExprPtr parse_primary() {
        auto e = std::make_unique<Expr>();
        switch (lex_.peek().kind) {
        case Tok::integer:
            e->kind = Expr::Kind::int_lit;
            e->ival = lex_.take().ival;
            return e;
        case Tok::text:
            e->kind = Expr::Kind::str_lit;
            e->text = lex_.take().text;
            return e;
        case Tok::variable:
            e->kind = Expr::Kind::variable;
            e->text = lex_.take().text;
            return e;
        case Tok::lparen: {
            lex_.take();
            if (lex_.accept_keyword("SELECT")) {
                e->kind = Expr::Kind::subquery;
                e->select = parse_select_body();
            } else {
                e = parse_expr();
            }
            lex_.expect(Tok::rparen, ")");
            return e;
        }
        case Tok::ident: {
            std::string name = parse_dotted_name();
            if (lex_.at(Tok::lparen)) {
                lex_.take();
                std::string canon = upper(name);
                if (canon == "COUNT") {
                    if (!lex_.at(Tok::star)) unsupported(lex_.peek().text);
                    lex_.take();
                    lex_.expect(Tok::rparen, ")");
                    e->kind = Expr::Kind::count_star;
                    return e;
                }
                e->kind = Expr::Kind::func;
                e->text = std::move(canon);
                if (!lex_.at(Tok::rparen)) {
                    if (e->text == "CONVERT") {
                        // first argument is a type name, not an expression
                        if (!lex_.at(Tok::ident)) unsupported(lex_.peek().text);
                        auto ty = std::make_unique<Expr>();
                        ty->kind = Expr::Kind::str_lit;
                        ty->text = upper(lex_.take().text);
                        e->args.push_back(std::move(ty));
                        lex_.expect(Tok::comma, ",");
                    }
                    e->args.push_back(parse_expr());
                    while (lex_.at(Tok::comma)) {
                        lex_.take();
                        e->args.push_back(parse_expr());
                    }
                }
                lex_.expect(Tok::rparen, ")");
                return e;
            }
            e->kind = Expr::Kind::column;
            e->text = std::move(name);
            return e;
        }
        default:
            unsupported(lex_.peek().text);
        }
    }

    Lexer lex_;
};

// ---------------------------------------------------------------------------
// evaluation

struct EvalCtx {
    const MockDb& db;
    const DbHooks& hooks;
    std::map<std::string, Value>& vars;
    const std::vector<std::string>* columns = nullptr;
    const std::vector<std::string>* row = nullptr;
    int exec_depth = 4;
};

Value eval_expr(const Expr& e, EvalCtx& ctx);
std::vector<std::vector<std::string>> eval_select(const SelectBody& body, EvalCtx& ctx);

std::size_t select_arity(const SelectBody& body, EvalCtx& ctx) {
    if (body.star) {
        const FixtureTable* table = ctx.db.find_table(body.from_table);
        if (!table) throw DbError("Invalid object name '" + body.from_table + "'");
        return table->columns.size();
    }
    return body.items.size();
}

std::string unc_host(std::string_view arg) {
    if (arg.size() < 3 || arg[0] != '\\' || arg[1] != '\\') return {};
    auto rest = arg.substr(2);
    auto cut = rest.find('\\');
    return std::string(cut == std::string_view::npos ? rest : rest.substr(0, cut));
}

std::string url_host(std::string_view url) {
    constexpr std::string_view scheme = "http://";
    if (url.substr(0, scheme.size()) != scheme) return {};
    auto rest = url.substr(scheme.size());
    auto cut = rest.find_first_of("/:");
    return std::string(cut == std::string_view::npos ? rest : rest.substr(0, cut));
}

Value call_function(const std::string& name, std::vector<Value> args, EvalCtx& ctx) {
    auto arity = [&](std::size_t n) {
        if (args.size() != n) throw DbError(name + " takes " + std::to_string(n) + " arguments");
    };
    if (name == "LENGTH" || name == "LEN") {
        arity(1);
        return Value::of_int(static_cast<std::int64_t>(to_text(args[0]).size()));
    }
    if (name == "SUBSTRING" || name == "SUBSTR") {
        arity(3);
        std::string s = to_text(args[0]);
        std::int64_t start = need_int(args[1], "SUBSTRING start");
        std::int64_t len = need_int(args[2], "SUBSTRING length");
        if (start < 1) start = 1;
        if (len < 0) len = 0;
        if (static_cast<std::size_t>(start) > s.size()) return Value::of_text("");
        return Value::of_text(s.substr(static_cast<std::size_t>(start - 1),
                                       static_cast<std::size_t>(len)));
    }
    if (name == "ASCII") {
        arity(1);
        std::string s = to_text(args[0]);
        return Value::of_int(s.empty() ? 0 : static_cast<unsigned char>(s[0]));
    }
    if (name == "LOWER" || name == "UPPER") {
        arity(1);
        std::string s = to_text(args[0]);
        for (char& c : s) {
            if (name == "LOWER" && c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
            if (name == "UPPER" && c >= 'a' && c <= 'z') c = char(c - 'a' + 'A');
        }
        return Value::of_text(std::move(s));
    }
    if (name == "CONCAT") {
        std::string out;
        for (const auto& a : args) out += to_text(a);
        return Value::of_text(std::move(out));
    }
    if (name == "STR") {
        arity(1);
        return Value::of_text(std::to_string(need_int(args[0], "STR")));
    }
    if (name == "HEX") {
        arity(1);
        std::string s = to_text(args[0]);
        return Value::of_text(codec::hex_encode(
            std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()),
                                          s.size())));
    }
    if (name == "HEX4") {
        arity(1);
        char buf[8];
        std::snprintf(buf, sizeof buf, "%04x",
                      static_cast<unsigned>(need_int(args[0], "HEX4") & 0xffff));
        return Value::of_text(buf);
    }
    if (name == "SLEEP") {
        arity(1);
        ctx.hooks.sleep_ms(need_int(args[0], "SLEEP") * 1000);
        return Value::of_int(0);
    }
    if (name == "CONVERT") {
        arity(2);
        const std::string& type = args[0].s;
        if (type != "INT" && type != "INTEGER") unsupported(type);
        auto n = try_int(args[1]);
        if (!n) {
            throw DbError("Conversion failed when converting the varchar value '" +
                          to_text(args[1]) + "' to data type int.");
        }
        return Value::of_int(*n);
    }
    if (name == "MASTER.DBO.FN_VARBINTOHEXSTR") {
        arity(1);
        std::string s = to_text(args[0]);
        return Value::of_text("0x" + codec::hex_encode(std::span<const std::uint8_t>(
                                         reinterpret_cast<const std::uint8_t*>(s.data()),
                                         s.size())));
    }
    if (name == "UTL_INADDR.GET_HOST_ADDRESS") {
        arity(1);
        return Value::of_text(ctx.hooks.resolve(to_text(args[0])));
    }
    if (name == "UTL_HTTP.REQUEST") {
        arity(1);
        std::string host = url_host(to_text(args[0]));
        if (!host.empty()) ctx.hooks.resolve(host);
        return Value::of_text(""); // page content itself is not modeled
    }
    if (name == "HTTPURITYPE") {
        arity(1);
        return args[0].kind == Value::Kind::text ? args[0] : Value::of_text(to_text(args[0]));
    }
    if (name == "LOAD_FILE") {
        arity(1);
        std::string host = unc_host(to_text(args[0]));
        if (!host.empty()) ctx.hooks.resolve(host);
        return Value::of_text("");
    }
    unsupported(name);
}

Value eval_expr(const Expr& e, EvalCtx& ctx) {
    switch (e.kind) {
    case Expr::Kind::int_lit:
        return Value::of_int(e.ival);
    case Expr::Kind::str_lit:
        return Value::of_text(e.text);
    case Expr::Kind::variable: {
        auto it = ctx.vars.find(e.text);
        if (it == ctx.vars.end()) throw DbError("undeclared variable @" + e.text);
        return it->second;
    }
    case Expr::Kind::column: {
        if (ctx.columns && ctx.row) {
            std::string want = upper(e.text);
            for (std::size_t i = 0; i < ctx.columns->size(); ++i) {
                if (upper((*ctx.columns)[i]) == want) return Value::of_text((*ctx.row)[i]);
            }
        }
        unsupported(e.text);
    }
    case Expr::Kind::negate:
        return Value::of_int(-need_int(eval_expr(*e.args[0], ctx), "unary minus"));
    case Expr::Kind::binop: {
        const std::string& op = e.text;
        // IF needs lazy branches; AND/OR short-circuit like real engines.
        if (op == "AND") {
            if (!truthy(eval_expr(*e.args[0], ctx))) return Value::of_int(0);
            return Value::of_int(truthy(eval_expr(*e.args[1], ctx)) ? 1 : 0);
        }
        if (op == "OR") {
            if (truthy(eval_expr(*e.args[0], ctx))) return Value::of_int(1);
            return Value::of_int(truthy(eval_expr(*e.args[1], ctx)) ? 1 : 0);
        }
        Value lhs = eval_expr(*e.args[0], ctx);
        Value rhs = eval_expr(*e.args[1], ctx);
        if (op == "+" ) {
            if (lhs.kind == Value::Kind::integer && rhs.kind == Value::Kind::integer) {
                return Value::of_int(lhs.i + rhs.i);
            }
            return Value::of_text(to_text(lhs) + to_text(rhs));
        }
        if (op == "||") return Value::of_text(to_text(lhs) + to_text(rhs));
        if (op == "-") return Value::of_int(need_int(lhs, "-") - need_int(rhs, "-"));
        if (op == "*") return Value::of_int(need_int(lhs, "*") * need_int(rhs, "*"));
        if (op == "/") {
            std::int64_t d = need_int(rhs, "/");
            if (d == 0) throw DbError("Divide by zero error encountered.");
            return Value::of_int(need_int(lhs, "/") / d);
        }
        // comparisons: numeric when both sides are numeric, else bytewise
        auto li = try_int(lhs);
        auto ri = try_int(rhs);
        int cmp;
        if (li && ri) {
            cmp = *li < *ri ? -1 : (*li > *ri ? 1 : 0);
        } else {
            std::string a = to_text(lhs), b = to_text(rhs);
            cmp = a < b ? -1 : (a > b ? 1 : 0);
        }
        bool r = false;
        if (op == "=") r = cmp == 0;
        else if (op == "<>" || op == "!=") r = cmp != 0;
        else if (op == "<") r = cmp < 0;
        else if (op == ">") r = cmp > 0;
        else if (op == "<=") r = cmp <= 0;
        else if (op == ">=") r = cmp >= 0;
        else unsupported(op);
        return Value::of_int(r ? 1 : 0);
    }
    case Expr::Kind::func: {
        if (e.text == "NOT") {
            return Value::of_int(truthy(eval_expr(*e.args[0], ctx)) ? 0 : 1);
        }
        if (e.text == "IF") {
            if (e.args.size() != 3) throw DbError("IF takes 3 arguments");
            bool cond = truthy(eval_expr(*e.args[0], ctx));
            return eval_expr(cond ? *e.args[1] : *e.args[2], ctx);
        }
        std::vector<Value> args;
        args.reserve(e.args.size());
        for (const auto& a : e.args) args.push_back(eval_expr(*a, ctx));
        return call_function(e.text, std::move(args), ctx);
    }
    case Expr::Kind::method: {
        Value recv = eval_expr(*e.args[0], ctx);
        if (e.text == "GETCLOB" || e.text == "GETBLOB" || e.text == "GETXML" ||
            e.text == "GETCONTENTTYPE") {
            std::string host = url_host(to_text(recv));
            if (!host.empty()) ctx.hooks.resolve(host);
            return Value::of_text("");
        }
        unsupported(e.text);
    }
    case Expr::Kind::subquery: {
        auto rows = eval_select(*e.select, ctx);
        if (rows.empty() || rows[0].empty()) return Value::of_text("");
        return Value::of_text(rows[0][0]);
    }
    case Expr::Kind::count_star:
        throw DbError("COUNT(*) is only valid as a select item");
    }
    unsupported("expression");
}

std::vector<std::vector<std::string>> eval_select(const SelectBody& body, EvalCtx& ctx) {
    std::vector<std::vector<std::string>> out;

    const FixtureTable* table = nullptr;
    if (!body.from_table.empty() && upper(body.from_table) != "DUAL") {
        table = ctx.db.find_table(body.from_table);
        if (!table) throw DbError("Invalid object name '" + body.from_table + "'");
    }

    bool count_star = body.items.size() == 1 && body.items[0]->kind == Expr::Kind::count_star;

    if (table == nullptr) {
        if (body.star || count_star) throw DbError("SELECT * needs a table");
        if (!body.where || truthy(eval_expr(*body.where, ctx))) {
            std::vector<std::string> row;
            for (const auto& item : body.items) row.push_back(to_text(eval_expr(*item, ctx)));
            out.push_back(std::move(row));
        }
    } else {
        std::vector<const std::vector<std::string>*> selected;
        for (const auto& row : table->rows) {
            EvalCtx row_ctx = ctx;
            row_ctx.columns = &table->columns;
            row_ctx.row = &row;
            if (body.where && !truthy(eval_expr(*body.where, row_ctx))) continue;
            selected.push_back(&row);
        }
        if (count_star) {
            out.push_back({std::to_string(selected.size())});
        } else {
            for (const auto* row : selected) {
                EvalCtx row_ctx = ctx;
                row_ctx.columns = &table->columns;
                row_ctx.row = row;
                if (body.star) {
                    out.push_back(*row);
                } else {
                    std::vector<std::string> projected;
                    for (const auto& item : body.items) {
                        projected.push_back(to_text(eval_expr(*item, row_ctx)));
                    }
                    out.push_back(std::move(projected));
                }
            }
        }
    }

    if (body.top && out.size() > static_cast<std::size_t>(*body.top)) {
        out.resize(static_cast<std::size_t>(*body.top));
    }
    if (body.limit) {
        auto [off, cnt] = *body.limit;
        if (off < 0) off = 0;
        if (cnt < 0) cnt = 0;
        std::vector<std::vector<std::string>> sliced;
        for (std::size_t i = static_cast<std::size_t>(off);
             i < out.size() && sliced.size() < static_cast<std::size_t>(cnt); ++i) {
            sliced.push_back(std::move(out[i]));
        }
        out = std::move(sliced);
    }

    if (body.union_next) {
        if (select_arity(body, ctx) != select_arity(*body.union_next, ctx)) {
            throw DbError("All queries combined using a UNION operator "
                          "must have an equal number of expressions.");
        }
        auto more = eval_select(*body.union_next, ctx);
        out.insert(out.end(), more.begin(), more.end());
    }
    return out;
}

class Executor {
public:
    Executor(const MockDb& db, const DbHooks& hooks) : db_(db), hooks_(hooks) {}

    void run_batch(const std::string& sql, int depth,
                   std::vector<std::vector<std::string>>& rows) {
        if (depth <= 0) throw DbError("dynamic SQL nesting too deep");
        Parser parser(sql);
        auto stmts = parser.parse_batch();
        for (const auto& stmt : stmts) run_statement(stmt, depth, rows);
    }

private:
    void run_statement(const Statement& stmt, int depth,
                       std::vector<std::vector<std::string>>& rows) {
        EvalCtx ctx{db_, hooks_, vars_, nullptr, nullptr, depth};
        switch (stmt.kind) {
        case Statement::Kind::declare_var:
            vars_[stmt.name] = Value::of_text("");
            return;
        case Statement::Kind::assign: {
            if (vars_.find(stmt.name) == vars_.end()) {
                throw DbError("undeclared variable @" + stmt.name);
            }
            vars_[stmt.name] = eval_expr(*stmt.expr, ctx);
            return;
        }
        case Statement::Kind::select: {
            auto result = eval_select(*stmt.select, ctx);
            rows.insert(rows.end(), result.begin(), result.end());
            return;
        }
        case Statement::Kind::exec_expr: {
            std::string dynamic = to_text(eval_expr(*stmt.expr, ctx));
            run_batch(dynamic, depth - 1, rows);
            return;
        }
        case Statement::Kind::exec_proc:
            run_procedure(stmt, ctx);
            return;
        case Statement::Kind::copy_from: {
            std::string source = to_text(eval_expr(*stmt.expr, ctx));
            std::string host = unc_host(source);
            if (!host.empty()) hooks_.resolve(host);
            return;
        }
        }
    }

    void run_procedure(const Statement& stmt, EvalCtx& ctx) {
        std::string canon = upper(stmt.name);
        // master..xp_dirtree, xp_dirtree and the dbo-qualified spelling all
        // name the same procedure.
        auto tail = canon;
        auto pos = tail.rfind('.');
        if (pos != std::string::npos) tail = tail.substr(pos + 1);
        if (tail == "XP_DIRTREE" || tail == "XP_FILEEXIST" || tail == "XP_SUBDIRS") {
            if (!stmt.expr) throw DbError(stmt.name + " requires an argument");
            std::string arg = to_text(eval_expr(*stmt.expr, ctx));
            std::string host = unc_host(arg);
            if (!host.empty()) hooks_.resolve(host);
            return;
        }
        unsupported(stmt.name);
    }

    const MockDb& db_;
    const DbHooks& hooks_;
    std::map<std::string, Value> vars_;
};

std::string csv_unquote_error(std::size_t line) {
    return "malformed CSV quoting on line " + std::to_string(line);
}

} // namespace

FixtureTable FixtureTable::from_csv(const std::string& path, std::string table_name) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open fixture CSV: " + path);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    std::size_t line = 1;
    auto end_field = [&]() {
        record.push_back(std::move(field));
        field.clear();
    };
    auto end_record = [&]() {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field.empty()) throw std::runtime_error(csv_unquote_error(line));
            quoted = true;
            break;
        case ',':
            end_field();
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            ++line;
            break;
        default:
            field.push_back(c);
        }
    }
    if (quoted) throw std::runtime_error(csv_unquote_error(line));
    if (!field.empty() || !record.empty()) end_record();

    if (records.empty()) throw std::runtime_error("fixture CSV has no header row: " + path);
    FixtureTable t;
    t.name = std::move(table_name);
    t.columns = records[0];
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != t.columns.size()) {
            throw std::runtime_error("fixture CSV row " + std::to_string(i + 1) +
                                     " has arity " + std::to_string(records[i].size()) +
                                     ", expected " + std::to_string(t.columns.size()));
        }
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

std::size_t FixtureTable::content_bytes() const {
    std::size_t n = 0;
    for (const auto& row : rows) {
        for (const auto& cell : row) n += cell.size();
    }
    return n;
}

MockDb::MockDb() {
    FixtureTable logins;
    logins.name = "sys.sql_logins";
    logins.columns = {"name", "password_hash"};
    logins.rows = {{"sa", std::string("\x01\x00\x23\x45\x67\x89\xab\xcd", 8)}};
    add_table(std::move(logins));
}

void MockDb::add_table(FixtureTable table) {
    std::string key = upper(table.name);
    tables_[key] = std::move(table);
}

const FixtureTable* MockDb::find_table(std::string_view name) const {
    auto it = tables_.find(upper(name));
    return it == tables_.end() ? nullptr : &it->second;
}

DbResult MockDb::exec_sql(const std::string& sql, const DbHooks& hooks) const {
    DbResult result;
    try {
        Executor exec(*this, hooks);
        exec.run_batch(sql, 4, result.rows);
    } catch (const std::exception& e) {
        result.ok = false;
        result.error = e.what();
        result.rows.clear();
    }
    return result;
}

} // namespace dnsexfil::sim
