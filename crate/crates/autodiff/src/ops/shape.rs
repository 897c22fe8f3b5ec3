use super::{as_matrix, rows_cols};
use crate::error::{shape_err, AutodiffError, Result};
use crate::{Scalar, Tensor, Var};

impl<'t, T: Scalar> Var<'t, T> {
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = (*x).clone().reshape(shape)?;
        Ok(self
            .tape()
            .record("reshape", out, &[*self], |g, _| vec![Some(g.to_vec())]))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(items: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = items
            .first()
            .ok_or_else(|| AutodiffError::Argument("concat_rows of nothing".into()))?;
        let values: Vec<_> = items.iter().map(|v| v.value()).collect();
        let cols = *values[0].shape().last().unwrap_or(&1);
        let mut rows = Vec::with_capacity(items.len());
        let mut data = Vec::new();
        for v in &values {
            let (r, c) = rows_cols(v.shape());
            if c != cols {
                return shape_err("concat_rows", format!("column counts {cols} vs {c}"));
            }
            rows.push(r);
            data.extend_from_slice(v.data());
        }
        let total: usize = rows.iter().sum();
        let out = Tensor::new(vec![total, cols], data)?;
        Ok(first
            .tape()
            .record("concat_rows", out, items, move |g, need| {
                let mut offset = 0;
                rows.iter()
                    .zip(need)
                    .map(|(&r, &n)| {
                        let piece = n.then(|| g[offset * cols..(offset + r) * cols].to_vec());
                        offset += r;
                        piece
                    })
                    .collect()
            }))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = as_matrix("slice_cols", x.shape())?;
        if start + len > c {
            return shape_err("slice_cols", format!("{start}+{len} exceeds {c} columns"));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self
            .tape()
            .record("slice_cols", out, &[*self], move |g, _| {
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![Some(gx)]
            }))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = as_matrix("slice_rows", x.shape())?;
        if start + len > r {
            return shape_err("slice_rows", format!("{start}+{len} exceeds {r} rows"));
        }
        let data = x.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self
            .tape()
            .record("slice_rows", out, &[*self], move |g, _| {
                let mut gx = vec![T::zero(); r * c];
                gx[start * c..(start + len) * c].copy_from_slice(g);
                vec![Some(gx)]
            }))
    }

    pub fn reverse_rows(&self) -> Result<Var<'t, T>> {
        let r = as_matrix("reverse_rows", &self.shape())?.0;
        self.permute_rows(&(0..r).rev().collect::<Vec<_>>())
    }

    /// `out[i] = x[perm[i]]` where `perm` is a permutation of the rows.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, _) = as_matrix("permute_rows", x.shape())?;
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || std::mem::replace(&mut seen[p], true) {
                return shape_err(
                    "permute_rows",
                    format!("{perm:?} is not a permutation of {r}"),
                );
            }
        }
        if perm.len() != r {
            return shape_err(
                "permute_rows",
                format!("{perm:?} is not a permutation of {r}"),
            );
        }
        self.gather_rows_named("permute_rows", perm)
    }

    /// `out[i] = table[idx[i]]`; repeated indices accumulate on backward.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t, T>> {
        self.gather_rows_named("gather_rows", idx)
    }

    fn gather_rows_named(&self, op: &'static str, idx: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let (r, c) = as_matrix(op, x.shape())?;
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return shape_err(op, format!("row {bad} out of {r}"));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        let idx = idx.to_vec();
        Ok(self.tape().record(op, out, &[*self], move |g, _| {
            let mut gx = vec![T::zero(); r * c];
            for (o, &i) in idx.iter().enumerate() {
                for (a, b) in gx[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&g[o * c..(o + 1) * c])
                {
                    *a += *b;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Adds `table[idx[i]]` to row `i` for every `Some` index.
    pub fn embed_add(&self, table: &Var<'t, T>, idx: &[Option<usize>]) -> Result<Var<'t, T>> {
        let (x, tb) = (self.value(), table.value());
        let (r, c) = as_matrix("embed_add", x.shape())?;
        let (tr, tc) = as_matrix("embed_add", tb.shape())?;
        if tc != c || idx.len() != r {
            return shape_err(
                "embed_add",
                format!("x [{r},{c}], table [{tr},{tc}], {} indices", idx.len()),
            );
        }
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= tr) {
            return shape_err("embed_add", format!("table row {bad} out of {tr}"));
        }
        let mut data = x.data().to_vec();
        for (row, i) in idx.iter().enumerate() {
            if let Some(i) = *i {
                for (a, b) in data[row * c..(row + 1) * c]
                    .iter_mut()
                    .zip(&tb.data()[i * c..])
                {
                    *a += *b;
                }
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let idx = idx.to_vec();
        Ok(self
            .tape()
            .record("embed_add", out, &[*self, *table], move |g, need| {
                let gt = need[1].then(|| {
                    let mut gt = vec![T::zero(); tr * tc];
                    for (row, i) in idx.iter().enumerate() {
                        if let Some(i) = *i {
                            for (a, b) in gt[i * c..(i + 1) * c].iter_mut().zip(&g[row * c..]) {
                                *a += *b;
                            }
                        }
                    }
                    gt
                });
                vec![need[0].then(|| g.to_vec()), gt]
            }))
    }
}
