//! One- and two-electron integrals: FCIDUMP ingestion and built-in models.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Integrals of a second-quantized electronic Hamiltonian over `L` spatial
/// orbitals. Two-electron integrals are held in physicists' order,
/// `V[p,q,r,s] = <pq|rs> = (pr|qs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralSet {
    pub n_orbitals: usize,
    /// Electron count from the source header; advisory only.
    pub n_electrons: usize,
    /// `2S` from the source header; advisory only.
    pub ms2: i64,
    /// Point-group labels; parsed and carried but never used.
    pub orbsym: Vec<i64>,
    pub isym: Option<i64>,
    pub one_body: DMatrix<f64>,
    two_body: Vec<f64>,
    pub core_energy: f64,
}

impl IntegralSet {
    pub fn zeros(n_orbitals: usize) -> Self {
        IntegralSet {
            n_orbitals,
            n_electrons: 0,
            ms2: 0,
            orbsym: Vec::new(),
            isym: None,
            one_body: DMatrix::zeros(n_orbitals, n_orbitals),
            two_body: vec![0.0; n_orbitals.pow(4)],
            core_energy: 0.0,
        }
    }

    #[inline]
    fn offset(&self, p: usize, q: usize, r: usize, s: usize) -> usize {
        let l = self.n_orbitals;
        ((p * l + q) * l + r) * l + s
    }

    /// Physicists' `<pq|rs>`, 0-based indices.
    #[inline]
    pub fn v(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.two_body[self.offset(p, q, r, s)]
    }

    /// Chemists' `(ij|kl)`, 0-based indices.
    #[inline]
    pub fn chem(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.v(i, k, j, l)
    }

    /// Set `(ij|kl)` together with its 8-fold real permutational partners.
    pub fn set_chem(&mut self, i: usize, j: usize, k: usize, l: usize, value: f64) {
        for (a, b, c, d) in [
            (i, j, k, l),
            (j, i, k, l),
            (i, j, l, k),
            (j, i, l, k),
            (k, l, i, j),
            (l, k, i, j),
            (k, l, j, i),
            (l, k, j, i),
        ] {
            let off = self.offset(a, c, b, d);
            self.two_body[off] = value;
        }
    }

    pub fn set_one_body(&mut self, p: usize, q: usize, value: f64) {
        self.one_body[(p, q)] = value;
        self.one_body[(q, p)] = value;
    }

    /// Largest deviation from `h_pq = h_qp` and the 8-fold `(pr|qs)` symmetry.
    pub fn symmetry_error(&self) -> f64 {
        let l = self.n_orbitals;
        let mut worst: f64 = 0.0;
        for p in 0..l {
            for q in 0..l {
                worst = worst.max((self.one_body[(p, q)] - self.one_body[(q, p)]).abs());
                for r in 0..l {
                    for s in 0..l {
                        let x = self.chem(p, q, r, s);
                        for y in [
                            self.chem(q, p, r, s),
                            self.chem(p, q, s, r),
                            self.chem(r, s, p, q),
                        ] {
                            worst = worst.max((x - y).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    /// Integrals in the orbital basis `φ'_k = Σ_p φ_p U[p,k]` for a real
    /// orthogonal `U`.
    pub fn rotate(&self, u: &DMatrix<f64>) -> Result<IntegralSet> {
        let l = self.n_orbitals;
        if u.nrows() != l || u.ncols() != l {
            return Err(Error::parameter("rotation matrix has wrong shape"));
        }
        let defect = (u.transpose() * u - DMatrix::<f64>::identity(l, l))
            .abs()
            .max();
        if defect > 1e-10 {
            return Err(Error::parameter(format!(
                "rotation is not orthogonal (defect {defect:e})"
            )));
        }
        let mut out = self.clone();
        out.one_body = u.transpose() * &self.one_body * u;
        // four successive quarter transforms of the chemists' tensor
        let mut t = vec![0.0; l.pow(4)];
        for i in 0..l {
            for j in 0..l {
                for k in 0..l {
                    for m in 0..l {
                        t[((i * l + j) * l + k) * l + m] = self.chem(i, j, k, m);
                    }
                }
            }
        }
        for axis in 0..4 {
            let mut next = vec![0.0; l.pow(4)];
            for idx in 0..l.pow(4) {
                let mut digits = [idx / (l * l * l), idx / (l * l) % l, idx / l % l, idx % l];
                let target = digits[axis];
                let mut acc = 0.0;
                for p in 0..l {
                    digits[axis] = p;
                    let src = ((digits[0] * l + digits[1]) * l + digits[2]) * l + digits[3];
                    acc += u[(p, target)] * t[src];
                }
                next[idx] = acc;
            }
            t = next;
        }
        for i in 0..l {
            for j in 0..l {
                for k in 0..l {
                    for m in 0..l {
                        let off = out.offset(i, k, j, m);
                        out.two_body[off] = t[((i * l + j) * l + k) * l + m];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rotate to the eigenvectors of the one-body integrals, ordered by
    /// ascending orbital energy, each with its largest component positive.
    pub fn to_one_body_eigenbasis(&self) -> Result<IntegralSet> {
        let l = self.n_orbitals;
        let eig = self.one_body.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut u = DMatrix::zeros(l, l);
        for (k, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).into_owned();
            let lead = col.iter().copied().fold(0.0f64, |best, x| {
                if x.abs() > best.abs() + 1e-12 {
                    x
                } else {
                    best
                }
            });
            if lead < 0.0 {
                col.neg_mut();
            }
            u.set_column(k, &col);
        }
        self.rotate(&u)
    }
}

/// Open-chain Hubbard model in the site basis: hopping `-t` between
/// neighbours and on-site repulsion `U n_{p↑} n_{p↓}`.
pub fn hubbard_integrals(n_sites: usize, t: f64, u: f64) -> Result<IntegralSet> {
    if n_sites == 0 {
        return Err(Error::parameter("Hubbard chain needs at least one site"));
    }
    let mut ints = IntegralSet::zeros(n_sites);
    for p in 0..n_sites.saturating_sub(1) {
        ints.set_one_body(p, p + 1, -t);
    }
    for p in 0..n_sites {
        ints.set_chem(p, p, p, p, u);
    }
    ints.n_electrons = n_sites;
    Ok(ints)
}

fn parse_real(token: &str, line: usize) -> Result<f64> {
    let normalized = token.replace(['D', 'd'], "E");
    normalized
        .parse::<f64>()
        .map_err(|_| Error::parse(line, format!("`{token}` is not a number")))
}

fn parse_int(token: &str, line: usize) -> Result<i64> {
    token
        .trim()
        .parse::<i64>()
        .map_err(|_| Error::parse(line, format!("`{token}` is not an integer")))
}

/// Parse an FCIDUMP document (Molpro convention).
pub fn parse_fcidump(text: &str) -> Result<IntegralSet> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    // header: from `&FCI` up to a line holding `&END` or `/`
    let mut header = String::new();
    let mut header_line = 1;
    let mut started = false;
    let mut closed = false;
    for (no, line) in lines.by_ref() {
        let trimmed = line.trim();
        if !started {
            if trimmed.is_empty() {
                continue;
            }
            let upper = trimmed.to_ascii_uppercase();
            let Some(rest) = upper.strip_prefix("&FCI") else {
                return Err(Error::parse(no, "expected `&FCI` namelist header"));
            };
            started = true;
            header_line = no;
            header.push_str(rest);
        } else {
            header.push(' ');
            header.push_str(&trimmed.to_ascii_uppercase());
        }
        let upper = header.to_ascii_uppercase();
        if let Some(pos) = upper.find("&END").or_else(|| upper.find('/')) {
            header.truncate(pos);
            closed = true;
            break;
        }
    }
    if !started {
        return Err(Error::parse(1, "empty FCIDUMP"));
    }
    if !closed {
        return Err(Error::parse(
            header_line,
            "header not terminated by `&END` or `/`",
        ));
    }

    let mut keys: Vec<(String, Vec<String>)> = Vec::new();
    for token in header.split(|c: char| c == ',' || c.is_whitespace()) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((k, v)) = token.split_once('=') {
            let mut values = Vec::new();
            if !v.is_empty() {
                values.push(v.to_string());
            }
            keys.push((k.trim().to_string(), values));
        } else if let Some(last) = keys.last_mut() {
            last.1.push(token.to_string());
        } else {
            return Err(Error::parse(
                header_line,
                format!("unexpected header token `{token}`"),
            ));
        }
    }
    let lookup = |name: &str| keys.iter().find(|(k, _)| k == name).map(|(_, v)| v);
    let norb = match lookup("NORB").and_then(|v| v.first()) {
        Some(v) => parse_int(v, header_line)?,
        None => return Err(Error::parse(header_line, "header lacks NORB")),
    };
    if norb <= 0 {
        return Err(Error::parse(header_line, "NORB must be positive"));
    }
    let norb = norb as usize;
    let mut ints = IntegralSet::zeros(norb);
    if let Some(v) = lookup("NELEC").and_then(|v| v.first()) {
        ints.n_electrons = parse_int(v, header_line)?.max(0) as usize;
    }
    if let Some(v) = lookup("MS2").and_then(|v| v.first()) {
        ints.ms2 = parse_int(v, header_line)?;
    }
    if let Some(v) = lookup("ORBSYM") {
        ints.orbsym = v
            .iter()
            .map(|x| parse_int(x, header_line))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = lookup("ISYM").and_then(|v| v.first()) {
        ints.isym = Some(parse_int(v, header_line)?);
    }

    for (no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::parse(
                no,
                format!("expected `value i j k l`, found {} fields", fields.len()),
            ));
        }
        let value = parse_real(fields[0], no)?;
        let mut idx = [0usize; 4];
        for (slot, f) in idx.iter_mut().zip(&fields[1..]) {
            let x = parse_int(f, no)?;
            if x < 0 || x as usize > norb {
                return Err(Error::parse(no, format!("index {x} outside 0..={norb}")));
            }
            *slot = x as usize;
        }
        match idx {
            [0, 0, 0, 0] => ints.core_energy = value,
            [i, j, 0, 0] if i > 0 && j > 0 => ints.set_one_body(i - 1, j - 1, value),
            [i, j, k, l] if i > 0 && j > 0 && k > 0 && l > 0 => {
                ints.set_chem(i - 1, j - 1, k - 1, l - 1, value)
            }
            // orbital energies (`e i 0 0 0`) carry no Hamiltonian information
            [_, 0, 0, 0] => {}
            _ => {
                return Err(Error::parse(
                    no,
                    format!("unsupported index pattern {idx:?}"),
                ))
            }
        }
    }
    Ok(ints)
}

pub fn parse_fcidump_bytes(bytes: &[u8]) -> Result<IntegralSet> {
    let text =
        std::str::from_utf8(bytes).map_err(|e| Error::parse(1, format!("not UTF-8: {e}")))?;
    parse_fcidump(text)
}

/// Serialize to FCIDUMP with 17 significant digits; only symmetry-unique
/// nonzero integrals are written.
pub fn write_fcidump(ints: &IntegralSet) -> String {
    let l = ints.n_orbitals;
    let mut out = String::new();
    let _ = write!(
        out,
        "&FCI NORB={},NELEC={},MS2={},",
        l, ints.n_electrons, ints.ms2
    );
    if !ints.orbsym.is_empty() {
        let syms: Vec<String> = ints.orbsym.iter().map(|s| s.to_string()).collect();
        let _ = write!(out, "\n  ORBSYM={},", syms.join(","));
    }
    if let Some(isym) = ints.isym {
        let _ = write!(out, "\n  ISYM={isym},");
    }
    out.push_str("\n&END\n");
    let pair = |a: usize, b: usize| a * (a + 1) / 2 + b;
    for i in 0..l {
        for j in 0..=i {
            for k in 0..l {
                for m in 0..=k {
                    if pair(i, j) < pair(k, m) {
                        continue;
                    }
                    let v = ints.chem(i, j, k, m);
                    if v != 0.0 {
                        let _ = writeln!(out, "{:.16e} {} {} {} {}", v, i + 1, j + 1, k + 1, m + 1);
                    }
                }
            }
        }
    }
    for i in 0..l {
        for j in 0..=i {
            let v = ints.one_body[(i, j)];
            if v != 0.0 {
                let _ = writeln!(out, "{:.16e} {} {} 0 0", v, i + 1, j + 1);
            }
        }
    }
    let _ = writeln!(out, "{:.16e} 0 0 0 0", ints.core_energy);
    out
}
