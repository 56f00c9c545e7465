//! Dense K-mode tensors and the algebraic primitives the regression model is
//! built from: outer products, Hadamard products, Frobenius inner products,
//! mode slices, and the two coefficient-tensor compositions (sum of rank-1
//! outer products, and sum of Hadamard products of full tensors).
//!
//! Layout: one canonical linearization is used everywhere, last index fastest
//! (stride of mode K is 1). Mode numbers and multi-indices are 1-based in the
//! public API, matching the data model used by the file formats; conversion to
//! zero-based offsets happens once, inside `DenseTensor`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SofterError};

/// Dense K-mode tensor over f64 in the canonical last-index-fastest layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

/// A 1-based multi-index (j_1, ..., j_K) into a K-mode tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DenseTensor {
    /// Builds a tensor from dims and a value buffer of length prod(dims).
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(SofterError::Shape("tensor needs at least one mode".into()));
        }
        if dims.iter().any(|&p| p == 0) {
            return Err(SofterError::Shape(format!("zero extent in dims {dims:?}")));
        }
        let len: usize = dims.iter().product();
        if values.len() != len {
            return Err(SofterError::Shape(format!(
                "value buffer length {} does not match prod(dims) = {len}",
                values.len()
            )));
        }
        Ok(DenseTensor { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        DenseTensor::new(dims, vec![0.0; len])
    }

    pub fn ones(dims: Vec<usize>) -> Result<Self> {
        let len = dims.iter().product();
        DenseTensor::new(dims, vec![1.0; len])
    }

    /// Builds a tensor by evaluating `f` at every 1-based multi-index, in
    /// canonical order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len: usize = dims.iter().product();
        let k = dims.len();
        let mut idx = vec![1usize; k];
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f(&idx));
            // advance the last-fastest odometer
            for m in (0..k).rev() {
                if idx[m] < dims[m] {
                    idx[m] += 1;
                    break;
                }
                idx[m] = 1;
            }
        }
        DenseTensor::new(dims, values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of modes K.
    pub fn mode_count(&self) -> usize {
        self.dims.len()
    }

    /// Total number of entries, prod(dims).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Strides of the canonical layout: stride[K-1] = 1, stride[k] = prod of
    /// later extents.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.dims)
    }

    /// Linear offset of a 1-based multi-index; the only place the 1-based
    /// external convention is converted to storage offsets.
    pub fn offset(&self, idx: &MultiIndex) -> Result<usize> {
        if idx.len() != self.dims.len() {
            return Err(SofterError::Shape(format!(
                "index has {} components, tensor has {} modes",
                idx.len(),
                self.dims.len()
            )));
        }
        let mut off = 0usize;
        let mut stride = 1usize;
        for m in (0..self.dims.len()).rev() {
            let j = idx.0[m];
            if j < 1 || j > self.dims[m] {
                return Err(SofterError::Shape(format!(
                    "index {j} out of range 1..={} in mode {}",
                    self.dims[m],
                    m + 1
                )));
            }
            off += (j - 1) * stride;
            stride *= self.dims[m];
        }
        Ok(off)
    }

    pub fn get(&self, idx: &MultiIndex) -> Result<f64> {
        Ok(self.values[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &MultiIndex, v: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.values[off] = v;
        Ok(())
    }

    fn check_same_dims(&self, other: &DenseTensor) -> Result<()> {
        if self.dims != other.dims {
            return Err(SofterError::Shape(format!(
                "dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Strides of the canonical last-index-fastest layout for `dims`.
pub fn strides_of(dims: &[usize]) -> Vec<usize> {
    let k = dims.len();
    let mut s = vec![1usize; k];
    for m in (0..k.saturating_sub(1)).rev() {
        s[m] = s[m + 1] * dims[m + 1];
    }
    s
}

/// Inverse of the canonical layout: the 1-based multi-index at a linear
/// offset.
pub fn index_from_offset(dims: &[usize], off: usize) -> Vec<usize> {
    strides_of(dims)
        .iter()
        .zip(dims)
        .map(|(&s, &d)| (off / s) % d + 1)
        .collect()
}

/// Outer product a_1 x a_2 x ... x a_K of K vectors: entry at (j_1..j_K) is
/// prod_k a_{k, j_k}.
pub fn outer_product(vectors: &[Vec<f64>]) -> Result<DenseTensor> {
    if vectors.is_empty() {
        return Err(SofterError::Shape("outer product of zero vectors".into()));
    }
    if vectors.iter().any(|v| v.is_empty()) {
        return Err(SofterError::Shape("outer product with an empty vector".into()));
    }
    let dims: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    DenseTensor::from_fn(dims, |idx| {
        idx.iter()
            .zip(vectors)
            .map(|(&j, v)| v[j - 1])
            .product()
    })
}

/// Entrywise (Hadamard) product of two tensors with equal dims.
pub fn hadamard(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    a.check_same_dims(b)?;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x * y)
        .collect();
    DenseTensor::new(a.dims.clone(), values)
}

/// Frobenius inner product: the sum of the entries of the Hadamard product.
/// For 1-mode tensors this is the dot product.
pub fn frobenius_inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.check_same_dims(b)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// The j-th slice of `a` along mode k (both 1-based): the (K-1)-mode tensor
/// obtained by fixing index position k at j. For a matrix, mode-1 slice j is
/// row j and mode-2 slice j is column j.
pub fn mode_slice(a: &DenseTensor, mode: usize, index: usize) -> Result<DenseTensor> {
    let k = a.mode_count();
    if mode < 1 || mode > k {
        return Err(SofterError::Shape(format!("mode {mode} out of range 1..={k}")));
    }
    if index < 1 || index > a.dims[mode - 1] {
        return Err(SofterError::Shape(format!(
            "slice index {index} out of range 1..={} in mode {mode}",
            a.dims[mode - 1]
        )));
    }
    if k == 1 {
        // a 0-mode tensor is represented as a single-entry 1-mode tensor
        return DenseTensor::new(vec![1], vec![a.values[index - 1]]);
    }
    let out_dims: Vec<usize> = a
        .dims
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != mode - 1)
        .map(|(_, &p)| p)
        .collect();
    let offsets = slice_offsets(a.dims(), mode, index);
    let values = offsets.iter().map(|&o| a.values[o]).collect();
    DenseTensor::new(out_dims, values)
}

/// Linear offsets (canonical order of the remaining modes) of the entries in
/// the mode-k slice at 1-based `index`. This is the slice's own canonical
/// layout, so writing through these offsets round-trips with `mode_slice`.
pub fn slice_offsets(dims: &[usize], mode: usize, index: usize) -> Vec<usize> {
    let k = dims.len();
    let strides = strides_of(dims);
    let fixed = (index - 1) * strides[mode - 1];
    let rest: Vec<usize> = (0..k).filter(|&m| m != mode - 1).collect();
    let count: usize = rest.iter().map(|&m| dims[m]).product();
    let mut offsets = Vec::with_capacity(count.max(1));
    let mut idx = vec![0usize; rest.len()];
    for _ in 0..count.max(1) {
        let off = fixed
            + rest
                .iter()
                .zip(&idx)
                .map(|(&m, &j)| j * strides[m])
                .sum::<usize>();
        offsets.push(off);
        for m in (0..rest.len()).rev() {
            if idx[m] + 1 < dims[rest[m]] {
                idx[m] += 1;
                break;
            }
            idx[m] = 0;
        }
    }
    offsets
}

/// Sum of D rank-1 outer products: factors[d] holds the K vectors of
/// component d. This is the coefficient tensor of the constrained (hard)
/// decomposition.
pub fn parafac_compose(factors: &[Vec<Vec<f64>>]) -> Result<DenseTensor> {
    if factors.is_empty() {
        return Err(SofterError::Shape("no components".into()));
    }
    let mut acc: Option<DenseTensor> = None;
    for component in factors {
        let t = outer_product(component)?;
        acc = Some(match acc {
            None => t,
            Some(mut a) => {
                a.check_same_dims(&t)?;
                for (x, y) in a.values.iter_mut().zip(&t.values) {
                    *x += y;
                }
                a
            }
        });
    }
    Ok(acc.unwrap())
}

/// Sum over d of the K-way Hadamard product of full tensors:
/// B = sum_d B_1^(d) o ... o B_K^(d), with components[d] holding the K
/// tensors of component d. All D*K tensors must share dims.
pub fn soft_compose(components: &[Vec<DenseTensor>]) -> Result<DenseTensor> {
    if components.is_empty() || components.iter().any(|c| c.is_empty()) {
        return Err(SofterError::Shape("no component tensors".into()));
    }
    let dims = components[0][0].dims().to_vec();
    let mut out = DenseTensor::zeros(dims)?;
    for component in components {
        let mut prod: Option<DenseTensor> = None;
        for t in component {
            out.check_same_dims(t)?;
            prod = Some(match prod {
                None => t.clone(),
                Some(mut p) => {
                    for (x, y) in p.values.iter_mut().zip(&t.values) {
                        *x *= y;
                    }
                    p
                }
            });
        }
        for (x, y) in out.values.iter_mut().zip(&prod.unwrap().values) {
            *x += y;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor2x2(v: [f64; 4]) -> DenseTensor {
        DenseTensor::new(vec![2, 2], v.to_vec()).unwrap()
    }

    #[test]
    fn outer_product_matches_definition() {
        let t = outer_product(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.values(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn outer_product_with_ones_copies_columns() {
        let v = vec![2.0, -1.0, 0.5];
        let t = outer_product(&[v.clone(), vec![1.0; 4]]).unwrap();
        for (j, &x) in v.iter().enumerate() {
            for m in 1..=4 {
                assert_eq!(t.get(&MultiIndex(vec![j + 1, m])).unwrap(), x);
            }
        }
    }

    #[test]
    fn outer_product_of_binary_vectors_is_binary_block() {
        // rank-1 pattern truth: support is the rectangle of active rows x cols
        let b1: Vec<f64> = (0..100).map(|i| if (20..40).contains(&i) { 1.0 } else { 0.0 }).collect();
        let b2: Vec<f64> = (0..100).map(|i| if (55..70).contains(&i) { 1.0 } else { 0.0 }).collect();
        let t = outer_product(&[b1.clone(), b2.clone()]).unwrap();
        for j1 in 1..=100 {
            for j2 in 1..=100 {
                let expect = b1[j1 - 1] * b2[j2 - 1];
                assert_eq!(t.get(&MultiIndex(vec![j1, j2])).unwrap(), expect);
                assert!(expect == 0.0 || expect == 1.0);
            }
        }
    }

    #[test]
    fn outer_product_rejects_empty() {
        assert!(outer_product(&[]).is_err());
        assert!(outer_product(&[vec![1.0], vec![]]).is_err());
    }

    #[test]
    fn hadamard_matches_definition() {
        let a = tensor2x2([1.0, 2.0, 3.0, 4.0]);
        let b = tensor2x2([2.0, 0.0, 1.0, 3.0]);
        assert_eq!(hadamard(&a, &b).unwrap().values(), &[2.0, 0.0, 3.0, 12.0]);
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let a = tensor2x2([1.5, -2.0, 0.0, 4.25]);
        let ones = DenseTensor::ones(vec![2, 2]).unwrap();
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
    }

    #[test]
    fn hadamard_rejects_dim_mismatch() {
        let a = tensor2x2([1.0; 4]);
        let b = DenseTensor::zeros(vec![2, 3]).unwrap();
        assert!(hadamard(&a, &b).is_err());
    }

    #[test]
    fn hadamard_agrees_with_loop_oracle() {
        let dims = vec![3, 4, 2];
        let a = DenseTensor::from_fn(dims.clone(), |i| (i[0] * 7 + i[1] * 3 + i[2]) as f64 * 0.25).unwrap();
        let b = DenseTensor::from_fn(dims.clone(), |i| (i[0] as f64 - 1.5 * i[1] as f64) + i[2] as f64).unwrap();
        let h = hadamard(&a, &b).unwrap();
        for j1 in 1..=3 {
            for j2 in 1..=4 {
                for j3 in 1..=2 {
                    let idx = MultiIndex(vec![j1, j2, j3]);
                    assert_eq!(
                        h.get(&idx).unwrap(),
                        a.get(&idx).unwrap() * b.get(&idx).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn frobenius_inner_matches_hand_value() {
        let a = tensor2x2([1.0, 2.0, 3.0, 4.0]);
        let b = tensor2x2([2.0, 0.0, 1.0, 3.0]);
        assert_eq!(frobenius_inner(&a, &b).unwrap(), 17.0);
    }

    #[test]
    fn frobenius_inner_with_zero_is_zero() {
        let a = tensor2x2([1.0, 2.0, 3.0, 4.0]);
        let z = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert_eq!(frobenius_inner(&a, &z).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_inner_with_self_is_sum_of_squares() {
        let a = tensor2x2([1.0, -2.0, 3.0, 4.0]);
        assert_eq!(frobenius_inner(&a, &a).unwrap(), 1.0 + 4.0 + 9.0 + 16.0);
    }

    #[test]
    fn mode_slices_of_matrix_are_rows_and_columns() {
        let a = tensor2x2([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mode_slice(&a, 1, 2).unwrap().values(), &[3.0, 4.0]);
        assert_eq!(mode_slice(&a, 2, 1).unwrap().values(), &[1.0, 3.0]);
    }

    #[test]
    fn mode_slice_matches_index_oracle() {
        let a = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let s = mode_slice(&a, 3, 4).unwrap();
        assert_eq!(s.dims(), &[2, 3]);
        for j1 in 1..=2 {
            for j2 in 1..=3 {
                assert_eq!(
                    s.get(&MultiIndex(vec![j1, j2])).unwrap(),
                    a.get(&MultiIndex(vec![j1, j2, 4])).unwrap()
                );
            }
        }
    }

    #[test]
    fn mode_slice_rejects_out_of_range() {
        let a = tensor2x2([1.0; 4]);
        assert!(mode_slice(&a, 0, 1).is_err());
        assert!(mode_slice(&a, 3, 1).is_err());
        assert!(mode_slice(&a, 1, 3).is_err());
    }

    #[test]
    fn parafac_all_ones_single_component() {
        let t = parafac_compose(&[vec![vec![1.0; 2], vec![1.0; 3]]]).unwrap();
        assert_eq!(t.values(), &[1.0; 6]);
    }

    #[test]
    fn parafac_matches_entrywise_loop_oracle() {
        let f: Vec<Vec<Vec<f64>>> = vec![
            vec![vec![0.5, -1.0], vec![2.0, 1.0, 0.25]],
            vec![vec![1.5, 2.0], vec![-0.5, 0.0, 1.0]],
            vec![vec![-2.0, 0.75], vec![1.0, 3.0, -1.0]],
        ];
        let t = parafac_compose(&f).unwrap();
        for j1 in 1..=2usize {
            for j2 in 1..=3usize {
                let expect: f64 = f.iter().map(|c| c[0][j1 - 1] * c[1][j2 - 1]).sum();
                assert!((t.get(&MultiIndex(vec![j1, j2])).unwrap() - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parafac_zero_component_is_inert() {
        let c1 = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let zero = vec![vec![0.0, 0.0], vec![5.0, 7.0]];
        let with = parafac_compose(&[c1.clone(), zero]).unwrap();
        let without = parafac_compose(&[c1]).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn soft_compose_with_identity_components_recovers_input() {
        let b = tensor2x2([1.0, -2.0, 0.5, 3.0]);
        let ones = DenseTensor::ones(vec![2, 2]).unwrap();
        let t = soft_compose(&[vec![b.clone(), ones]]).unwrap();
        assert_eq!(t, b);
    }

    #[test]
    fn soft_compose_of_constant_slices_equals_parafac() {
        // mode-k slices constant at the gamma values embed the constrained case
        let g1 = vec![0.5, -1.5];
        let g2 = vec![2.0, 1.0, -0.25];
        let b1 = DenseTensor::from_fn(vec![2, 3], |i| g1[i[0] - 1]).unwrap();
        let b2 = DenseTensor::from_fn(vec![2, 3], |i| g2[i[1] - 1]).unwrap();
        let soft = soft_compose(&[vec![b1, b2]]).unwrap();
        let hard = parafac_compose(&[vec![g1, g2]]).unwrap();
        assert_eq!(soft, hard);
    }

    #[test]
    fn soft_compose_matches_loop_oracle() {
        let dims = vec![2, 3];
        let mk = |seed: usize| {
            DenseTensor::from_fn(dims.clone(), move |i| {
                ((seed * 31 + i[0] * 7 + i[1] * 3) % 11) as f64 * 0.5 - 2.0
            })
            .unwrap()
        };
        let comps = vec![vec![mk(1), mk(2)], vec![mk(3), mk(4)]];
        let t = soft_compose(&comps).unwrap();
        for j1 in 1..=2 {
            for j2 in 1..=3 {
                let idx = MultiIndex(vec![j1, j2]);
                let expect: f64 = comps
                    .iter()
                    .map(|c| c[0].get(&idx).unwrap() * c[1].get(&idx).unwrap())
                    .sum();
                assert!((t.get(&idx).unwrap() - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn slice_offsets_cover_slice_in_canonical_order() {
        let dims = vec![2, 3, 4];
        let a = DenseTensor::from_fn(dims.clone(), |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        for mode in 1..=3 {
            for index in 1..=dims[mode - 1] {
                let offs = slice_offsets(&dims, mode, index);
                let s = mode_slice(&a, mode, index).unwrap();
                let via_offsets: Vec<f64> = offs.iter().map(|&o| a.values()[o]).collect();
                assert_eq!(via_offsets, s.values());
            }
        }
    }
}
