use crate::numeric::{Matrix, NumericError, Tape, Var};

fn check_heads(width: usize, heads: usize) -> Result<usize, NumericError> {
    if heads == 0 || width % heads != 0 {
        return Err(NumericError::ShapeMismatch { op: "linear_attention_heads", left: (width, 1), right: (heads, 1) });
    }
    Ok(width / heads)
}

/// Multi-head kernelized attention with feature map `φ(x) = elu(x) + 1`.
///
/// For each head, `out_i = φ(q_i)ᵀ (Σ_j φ(k_j) v_jᵀ) / φ(q_i)ᵀ Σ_j φ(k_j)`.
/// Head outputs are concatenated in order; the output projection is applied
/// by the caller. Cost is linear in both sequence lengths.
pub fn linear_attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize) -> Result<Matrix, NumericError> {
    if q.cols() != k.cols() || q.cols() != v.cols() {
        return Err(NumericError::ShapeMismatch { op: "linear_attention", left: q.shape(), right: v.shape() });
    }
    if k.rows() != v.rows() {
        return Err(NumericError::ShapeMismatch { op: "linear_attention", left: k.shape(), right: v.shape() });
    }
    let hd = check_heads(q.cols(), heads)?;
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        let fq = q.slice_cols(cols.start, cols.end).elu_plus_one();
        let fk = k.slice_cols(cols.start, cols.end).elu_plus_one();
        let vh = v.slice_cols(cols.start, cols.end);
        let kv = fk.t_matmul(&vh)?;
        let ksum = fk.sum_rows();
        let num = fq.matmul(&kv)?;
        let den = fq.matmul_t(&ksum)?;
        for r in 0..q.rows() {
            let d = den[(r, 0)];
            for (c, o) in cols.clone().enumerate() {
                out[(r, o)] = num[(r, c)] / d;
            }
        }
    }
    Ok(out)
}

/// [`linear_attention`] recorded on a tape.
pub fn linear_attention_tape(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NumericError> {
    let (qs, ks, vs) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    if qs.1 != ks.1 || qs.1 != vs.1 || ks.0 != vs.0 {
        return Err(NumericError::ShapeMismatch { op: "linear_attention", left: qs, right: vs });
    }
    let hd = check_heads(qs.1, heads)?;
    let mut parts = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * hd, (h + 1) * hd);
        let qh = tape.slice_cols(q, s, e)?;
        let kh = tape.slice_cols(k, s, e)?;
        let vh = tape.slice_cols(v, s, e)?;
        let fq = tape.elu_plus_one(qh);
        let fk = tape.elu_plus_one(kh);
        let fkt = tape.transpose(fk);
        let kv = tape.matmul(fkt, vh)?;
        let num = tape.matmul(fq, kv)?;
        let ksum = tape.sum_rows(fk);
        let ksum_t = tape.transpose(ksum);
        let den = tape.matmul(fq, ksum_t)?;
        parts.push(tape.div_col_broadcast(num, den)?);
    }
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    tape.concat_cols(&parts)
}
