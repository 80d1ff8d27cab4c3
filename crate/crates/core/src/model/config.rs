//! Model config documents.
//!
//! ```text
//! # comment
//! dimension = 2
//!
//! [params]
//! alpha = 2
//! beta = alpha / 2        # earlier params may be referenced
//!
//! [jumps]
//! (-1, 1) : alpha * x1 * x2
//! (1, 0)  : beta
//!
//! [domain]                # optional, default `orthant`
//! orthant | everywhere
//! interval x1 0 inf       # per-coordinate bounds, unlisted axes unbounded
//! halfspace 1 1 <= 10     # normal . y <= bound
//! ```
//!
//! `interval` and `halfspace` lines may be mixed; the result is their
//! intersection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::expr::{parse_expr, variable_index, Pos};
use super::{Domain, HalfSpace, Jump, JumpVector, Model, ModelError, RateExpr};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Params,
    Jumps,
    Domain,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        pos: Pos { line, col },
        msg: msg.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Column (1-based) of `part` within `line`; `part` must be a subslice.
fn col_of(line: &str, part: &str) -> usize {
    part.as_ptr() as usize - line.as_ptr() as usize + 1
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_number(tok: &str, line: usize, col: usize) -> Result<f64, ModelError> {
    match tok {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| syntax(line, col, format!("expected a number, found `{tok}`"))),
    }
}

/// Whitespace-separated tokens with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    line.split_whitespace().map(|t| (col_of(line, t), t)).collect()
}

struct DomainBuilder {
    keyword: Option<(Domain, usize)>,
    intervals: BTreeMap<usize, (f64, f64)>,
    halfspaces: Vec<HalfSpace>,
}

impl DomainBuilder {
    fn finish(self, dim: usize) -> Result<Domain, ModelError> {
        let constrained = !self.intervals.is_empty() || !self.halfspaces.is_empty();
        match self.keyword {
            Some((_, line)) if constrained => Err(syntax(
                line,
                1,
                "`orthant`/`everywhere` cannot be combined with interval or halfspace lines",
            )),
            Some((d, _)) => Ok(d),
            None if !constrained => Ok(Domain::Orthant),
            None if self.halfspaces.is_empty() => {
                let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); dim];
                for (i, iv) in self.intervals {
                    b[i] = iv;
                }
                Ok(Domain::Box(b))
            }
            None => {
                let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); dim];
                for (i, iv) in self.intervals {
                    b[i] = iv;
                }
                let mut hs = Domain::Box(b).half_spaces(dim);
                hs.extend(self.halfspaces);
                Ok(Domain::HalfSpaces(hs))
            }
        }
    }
}

fn parse_jump_vector(
    text: &str,
    line_no: usize,
    col: usize,
    dim: usize,
) -> Result<JumpVector, ModelError> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| syntax(line_no, col, "jump vector must be written as (a, b, ...)"))?;
    let mut entries = Vec::new();
    let mut offset = col + 1;
    for part in inner.split(',') {
        let t = part.trim();
        let c = offset + (part.len() - part.trim_start().len());
        let v = t
            .parse::<i64>()
            .map_err(|_| syntax(line_no, c, format!("expected an integer, found `{t}`")))?;
        entries.push(v);
        offset += part.len() + 1;
    }
    if entries.len() != dim {
        return Err(ModelError::DimensionMismatch {
            pos: Pos { line: line_no, col },
            got: entries.len(),
            dim,
        });
    }
    JumpVector::new(entries).map_err(|_| syntax(line_no, col, "jump vector is all zero"))
}

/// Parse a model config document.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let mut section = Section::Top;
    let mut dim: Option<usize> = None;
    let mut params: BTreeMap<String, f64> = BTreeMap::new();
    let mut jumps: Vec<Jump> = Vec::new();
    let mut seen = Vec::new();
    let mut domain = DomainBuilder {
        keyword: None,
        intervals: BTreeMap::new(),
        halfspaces: Vec::new(),
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = strip_comment(raw);
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let col = col_of(raw, trimmed);

        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line_no, col, "unterminated section header"))?
                .trim();
            let next = match name {
                "params" => Section::Params,
                "jumps" => Section::Jumps,
                "domain" => Section::Domain,
                _ => return Err(syntax(line_no, col, format!("unknown section `[{name}]`"))),
            };
            if seen.contains(&name.to_string()) {
                return Err(syntax(line_no, col, format!("section `[{name}]` appears twice")));
            }
            if dim.is_none() {
                return Err(syntax(line_no, col, "`dimension` must be set before any section"));
            }
            if next == Section::Params && seen.iter().any(|s| s == "jumps") {
                return Err(syntax(line_no, col, "`[params]` must precede `[jumps]`"));
            }
            seen.push(name.to_string());
            section = next;
            continue;
        }

        match section {
            Section::Top => {
                let (key, value) = trimmed
                    .split_once('=')
                    .ok_or_else(|| syntax(line_no, col, "expected `dimension = <n>`"))?;
                if key.trim() != "dimension" {
                    return Err(syntax(
                        line_no,
                        col,
                        format!("unknown key `{}`", key.trim()),
                    ));
                }
                if dim.is_some() {
                    return Err(syntax(line_no, col, "`dimension` given twice"));
                }
                let vcol = col_of(raw, value.trim_start());
                let d: usize = value
                    .trim()
                    .parse()
                    .ok()
                    .filter(|&d| d >= 1)
                    .ok_or_else(|| syntax(line_no, vcol, "dimension must be a positive integer"))?;
                dim = Some(d);
            }
            Section::Params => {
                let (key, value) = trimmed
                    .split_once('=')
                    .ok_or_else(|| syntax(line_no, col, "expected `name = value`"))?;
                let name = key.trim();
                if !is_identifier(name) || variable_index(name).is_some() {
                    return Err(syntax(line_no, col, format!("invalid parameter name `{name}`")));
                }
                if params.contains_key(name) {
                    return Err(syntax(line_no, col, format!("parameter `{name}` defined twice")));
                }
                let vstart = value.trim_start();
                let vcol = col_of(raw, vstart);
                let expr = parse_expr(vstart.trim_end(), 0, &params, line_no, vcol)?;
                let v = expr.eval(&[]);
                if !v.is_finite() {
                    return Err(syntax(line_no, vcol, format!("parameter `{name}` is not finite")));
                }
                params.insert(name.to_string(), v);
            }
            Section::Jumps => {
                let d = dim.expect("dimension checked at section start");
                let close = trimmed
                    .find(')')
                    .ok_or_else(|| syntax(line_no, col, "expected `(j1, ..., jd) : rate`"))?;
                let vector = parse_jump_vector(&trimmed[..=close], line_no, col, d)?;
                let rest = &trimmed[close + 1..];
                let rest_trim = rest.trim_start();
                let rate_src = rest_trim.strip_prefix(':').ok_or_else(|| {
                    syntax(line_no, col_of(raw, rest_trim), "expected `:` after jump vector")
                })?;
                let rate_start = rate_src.trim_start();
                let rcol = col_of(raw, rate_start);
                let expr = parse_expr(rate_start.trim_end(), d, &params, line_no, rcol)?;
                if jumps.iter().any(|j| j.vector == vector) {
                    return Err(syntax(line_no, col, format!("jump {vector} is listed twice")));
                }
                let rate = RateExpr::new(rate_start.trim_end(), expr, d)?;
                jumps.push(Jump { vector, rate });
            }
            Section::Domain => {
                let d = dim.expect("dimension checked at section start");
                let toks = tokens(raw.split('#').next().unwrap_or(""));
                match toks[0].1 {
                    kw @ ("orthant" | "everywhere") => {
                        if toks.len() != 1 {
                            return Err(syntax(line_no, toks[1].0, "unexpected trailing input"));
                        }
                        if domain.keyword.is_some() {
                            return Err(syntax(line_no, col, "domain keyword given twice"));
                        }
                        let dom = if kw == "orthant" {
                            Domain::Orthant
                        } else {
                            Domain::Everywhere
                        };
                        domain.keyword = Some((dom, line_no));
                    }
                    "interval" => {
                        if toks.len() != 4 {
                            return Err(syntax(line_no, col, "expected `interval x<k> <lo> <hi>`"));
                        }
                        let k = variable_index(toks[1].1)
                            .filter(|&k| k >= 1 && k <= d)
                            .ok_or_else(|| {
                                syntax(line_no, toks[1].0, format!("unknown variable `{}`", toks[1].1))
                            })?;
                        let lo = parse_number(toks[2].1, line_no, toks[2].0)?;
                        let hi = parse_number(toks[3].1, line_no, toks[3].0)?;
                        if lo > hi {
                            return Err(syntax(line_no, toks[2].0, "interval has lo > hi"));
                        }
                        if domain.intervals.insert(k - 1, (lo, hi)).is_some() {
                            return Err(syntax(line_no, col, format!("interval for x{k} given twice")));
                        }
                    }
                    "halfspace" => {
                        if toks.len() != d + 3 || toks[d + 1].1 != "<=" {
                            return Err(syntax(
                                line_no,
                                col,
                                format!("expected `halfspace a1 .. a{d} <= b`"),
                            ));
                        }
                        let normal = toks[1..=d]
                            .iter()
                            .map(|&(c, t)| parse_number(t, line_no, c))
                            .collect::<Result<Vec<_>, _>>()?;
                        if normal.iter().any(|v| !v.is_finite()) || normal.iter().all(|&v| v == 0.0)
                        {
                            return Err(syntax(line_no, col, "halfspace normal must be finite and nonzero"));
                        }
                        let (bc, bt) = toks[d + 2];
                        let bound = parse_number(bt, line_no, bc)?;
                        domain.halfspaces.push(HalfSpace { normal, bound });
                    }
                    other => {
                        return Err(syntax(
                            line_no,
                            toks[0].0,
                            format!("unknown domain directive `{other}`"),
                        ))
                    }
                }
            }
        }
    }

    let dim = dim.ok_or_else(|| syntax(1, 1, "missing `dimension`"))?;
    if jumps.is_empty() {
        return Err(ModelError::Invalid("no jumps defined".into()));
    }
    let domain = domain.finish(dim)?;
    Model::new(dim, jumps, params, domain)
}

fn fmt_bound(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Render a model back to config text; `parse_model` accepts the output.
pub fn write_model(model: &Model) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dimension = {}", model.dim());
    if !model.params().is_empty() {
        s.push_str("\n[params]\n");
        for (k, v) in model.params() {
            let _ = writeln!(s, "{k} = {v:?}");
        }
    }
    s.push_str("\n[jumps]\n");
    for j in model.jumps() {
        let _ = writeln!(s, "{} : {}", j.vector, j.rate.source());
    }
    s.push_str("\n[domain]\n");
    match model.domain() {
        Domain::Orthant => s.push_str("orthant\n"),
        Domain::Everywhere => s.push_str("everywhere\n"),
        Domain::Box(b) => {
            for (i, &(lo, hi)) in b.iter().enumerate() {
                if lo.is_finite() || hi.is_finite() {
                    let _ = writeln!(s, "interval x{} {} {}", i + 1, fmt_bound(lo), fmt_bound(hi));
                }
            }
            if b.iter().all(|(lo, hi)| !lo.is_finite() && !hi.is_finite()) {
                s.push_str("everywhere\n");
            }
        }
        Domain::HalfSpaces(hs) => {
            if hs.is_empty() {
                s.push_str("everywhere\n");
            }
            for h in hs {
                s.push_str("halfspace");
                for a in &h.normal {
                    let _ = write!(s, " {a:?}");
                }
                let _ = writeln!(s, " <= {:?}", h.bound);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIR: &str = "\
# SIR with immigration
dimension = 2

[params]
a = 2
b = 1
g = 1

[jumps]
(-1, 1) : a * x1 * x2
(1, 0)  : b
(0, -1) : g * x2
";

    fn err_pos(e: ModelError) -> Pos {
        match e {
            ModelError::Syntax { pos, .. } => pos,
            ModelError::Expr(super::super::ExprError::Syntax { pos, .. })
            | ModelError::Expr(super::super::ExprError::UnknownName { pos, .. }) => pos,
            ModelError::DimensionMismatch { pos, .. } => pos,
            other => panic!("no position in {other:?}"),
        }
    }

    #[test]
    fn parses_sir() {
        let m = parse_model(SIR).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.num_jumps(), 3);
        assert_eq!(m.jumps()[0].vector.entries(), &[-1, 1]);
        assert_eq!(m.params()["a"], 2.0);
        assert_eq!(m.domain(), &Domain::Orthant);
    }

    #[test]
    fn constant_rate_model() {
        let m = parse_model("dimension = 1\n[jumps]\n(1) : 1\n").unwrap();
        assert_eq!(m.eval_rates(&[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn unknown_parameter_is_reported_with_position() {
        let e = parse_model("dimension = 1\n[jumps]\n(1) : 2 * q\n").unwrap_err();
        match &e {
            ModelError::Expr(super::super::ExprError::UnknownName { name, pos }) => {
                assert_eq!(name, "q");
                assert_eq!(*pos, Pos { line: 3, col: 11 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let e = parse_model("dimension = 2\n[jumps]\n(1, 0, 0) : 1\n").unwrap_err();
        assert!(matches!(e, ModelError::DimensionMismatch { got: 3, dim: 2, .. }));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let e = parse_model("dimension = 1\n[jumps]\n(1) : x1 x1\n").unwrap_err();
        assert_eq!(err_pos(e).line, 3);
        assert!(parse_model("dimension = 1\n[jumps]\n(1) : 1\n[domain]\northant extra\n").is_err());
        assert!(parse_model("dimension = 1 2\n[jumps]\n(1) : 1\n").is_err());
    }

    #[test]
    fn structural_errors() {
        assert!(parse_model("[jumps]\n(1) : 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n").is_err());
        assert!(parse_model("dimension = 1\n[bogus]\n").is_err());
        assert!(parse_model("dimension = 0\n").is_err());
        assert!(parse_model("dimension = 1\n[params]\nx1 = 3\n[jumps]\n(1) : 1\n").is_err());
        assert!(parse_model("dimension = 1\n[params]\na = 1\na = 2\n[jumps]\n(1) : 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n(0) : 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n(1.5) : 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n(1) 1\n").is_err());
    }

    #[test]
    fn params_may_reference_earlier_params() {
        let m = parse_model("dimension = 1\n[params]\na = 3\nb = a^2 / 2\n[jumps]\n(1) : b\n")
            .unwrap();
        assert_eq!(m.params()["b"], 4.5);
        assert!(parse_model("dimension = 1\n[params]\nb = a\na = 1\n[jumps]\n(1) : b\n").is_err());
    }

    #[test]
    fn domain_directives() {
        let m = parse_model(
            "dimension = 2\n[jumps]\n(1, 0) : 1\n[domain]\ninterval x1 0 5\ninterval x2 -inf inf\n",
        )
        .unwrap();
        assert!(matches!(m.domain(), Domain::Box(_)));
        assert!(m.domain().contains(&[5.0, -100.0]));
        assert!(!m.domain().contains(&[5.5, 0.0]));

        let m = parse_model(
            "dimension = 2\n[jumps]\n(1, 0) : 1\n[domain]\ninterval x1 0 inf\nhalfspace 1 1 <= 10\n",
        )
        .unwrap();
        assert!(m.domain().contains(&[3.0, 7.0]));
        assert!(!m.domain().contains(&[3.0, 7.5]));
        assert!(!m.domain().contains(&[-1.0, 0.0]));

        assert!(parse_model("dimension = 1\n[jumps]\n(1) : 1\n[domain]\northant\ninterval x1 0 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n(1) : 1\n[domain]\ninterval x2 0 1\n").is_err());
        assert!(parse_model("dimension = 1\n[jumps]\n(1) : 1\n[domain]\nhalfspace 1 < 2\n").is_err());
    }

    #[test]
    fn write_then_parse_round_trips() {
        for src in [
            SIR,
            "dimension = 2\n[jumps]\n(1, 0) : 1 + x2\n(0, -1) : x2\n[domain]\ninterval x1 0 5\n",
            "dimension = 1\n[jumps]\n(1) : 1\n[domain]\neverywhere\n",
            "dimension = 2\n[jumps]\n(1, 1) : 1\n[domain]\nhalfspace 1 -2 <= 0.5\n",
        ] {
            let m = parse_model(src).unwrap();
            let text = write_model(&m);
            let back = parse_model(&text).unwrap();
            assert_eq!(back.dim(), m.dim());
            assert_eq!(back.params(), m.params());
            assert_eq!(back.domain(), m.domain());
            assert_eq!(back.jump_vectors(), m.jump_vectors());
            for y in [[0.25, 0.5], [1.0, 2.0]] {
                let y = &y[..m.dim()];
                assert_eq!(back.eval_rates(y).ok(), m.eval_rates(y).ok());
            }
        }
    }
}
