#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dnsexfil::sim {

/// A named table of string cells. The first column is the lookup key the
/// simulated web endpoint filters on.
struct FixtureTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    /// Header row becomes the column names. Understands quoted fields with
    /// doubled-quote escapes.
    static FixtureTable from_csv(const std::string& path, std::string table_name);

    /// Sum of cell byte lengths (the size every retrieval technique is
    /// measured against).
    std::size_t content_bytes() const;
};

struct DbResult {
    bool ok = true;
    std::string error; // the message a real engine would surface to the page
    std::vector<std::vector<std::string>> rows;
};

/// Side-effect hooks the evaluator calls while executing SQL.
struct DbHooks {
    /// Name resolution attempt; returns the resolved address in dotted form,
    /// or an empty string when resolution failed. Never throws into SQL.
    std::function<std::string(const std::string& host)> resolve;
    /// Advance simulated time (SLEEP and friends).
    std::function<void(std::int64_t ms)> sleep_ms;
};

/// Recognizer and tiny evaluator for exactly the SQL dialect the retrieval
/// drivers and the six resolution-provoking subroutines need. Not a SQL
/// engine: anything outside the supported grammar comes back as a DbResult
/// error naming the offending token, which doubles as the error-based
/// retrieval channel.
///
/// Supported shapes:
///   SELECT [TOP n] list [FROM t [WHERE pred]] [LIMIT off,cnt] [UNION SELECT ...]
///   SELECT @var = expr           DECLARE @var varchar(n)
///   EXEC('dynamic sql')          EXEC master..xp_dirtree '<arg>'   (also bare)
///   COPY <ident> FROM <expr>
/// with string/integer expressions, '+' and '||' concatenation, comparison
/// and boolean operators, scalar subqueries, and the functions LENGTH,
/// SUBSTRING, ASCII, LOWER, UPPER, CONCAT, IF, SLEEP, STR, HEX, HEX4,
/// CONVERT(INT, x), COUNT(*), master.dbo.fn_varbintohexstr, LOAD_FILE,
/// UTL_INADDR.GET_HOST_ADDRESS, UTL_HTTP.REQUEST, HTTPURITYPE(u).GETCLOB().
///
/// Lab conventions baked into the dialect: string literals use '' to escape
/// a quote and treat backslashes literally; '+' between a string and an
/// integer coerces the integer to its decimal form; HEX returns lowercase
/// hex of the argument's bytes and HEX4 formats an integer as exactly four
/// lowercase hex digits (stand-ins for the per-DBMS hex/format idioms).
class MockDb {
public:
    /// Starts with the one-row sys.sql_logins table so credential-style
    /// vectors have something to pull.
    MockDb();

    void add_table(FixtureTable table);
    const FixtureTable* find_table(std::string_view name) const;

    /// Run a batch. All failures (syntax, type, conversion) are returned in
    /// DbResult.error; this never throws.
    DbResult exec_sql(const std::string& sql, const DbHooks& hooks) const;

private:
    std::map<std::string, FixtureTable> tables_;
};

} // namespace dnsexfil::sim
