//! Central finite-difference gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Tensor;

/// Denominator floor in the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Central differences `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every coordinate.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-8)`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(numeric.data()).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.data().iter().copied())
        .max(norm(&mut numeric.data().iter().copied()))
        .max(REL_FLOOR);
    diff / scale
}

/// Largest relative error between `analytic` and central differences of `f` at `x`.
pub fn finite_diff_check(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
) -> f64 {
    relative_error(analytic, &numeric_gradient(f, x, step))
}

/// Runs `build` on a fresh tape with `x` as the only leaf and returns the
/// scalar value and its gradient.
pub fn value_and_grad(
    build: impl Fn(&mut Tape<'static>, Var) -> Result<Var>,
    x: &Tensor,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::detached();
    let v = tape.leaf(x.clone());
    let out = build(&mut tape, v)?;
    let value = tape.value(out).item();
    let grads = tape.backward(out)?;
    let g = grads
        .wrt(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    Ok((value, g))
}

/// Finite-difference check of a tape-built scalar function of one input.
pub fn check_tape_fn(
    build: impl Fn(&mut Tape<'static>, Var) -> Result<Var>,
    x: &Tensor,
    step: f64,
) -> Result<f64> {
    let (_, analytic) = value_and_grad(&build, x)?;
    let f = |p: &Tensor| {
        let mut tape = Tape::detached();
        let v = tape.constant(p.clone());
        let out = build(&mut tape, v).expect("forward succeeded at the base point");
        tape.value(out).item()
    };
    Ok(finite_diff_check(f, x, &analytic, step))
}

/// Outcome of checking one input of one primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveCheck {
    pub name: String,
    pub rel_error: f64,
}

type Build = dyn Fn(&mut Tape<'static>, &[Var]) -> Result<Var>;

/// Checks `build` with respect to each of `inputs`. Tensor outputs are
/// reduced to a scalar by a fixed random weighting so every output element
/// contributes.
fn check_op(name: &str, inputs: Vec<Tensor>, build: &Build, step: f64, out: &mut Vec<PrimitiveCheck>) -> Result<()> {
    let scalarize = |tape: &mut Tape<'static>, vars: &[Var]| -> Result<Var> {
        let y = build(tape, vars)?;
        if tape.value(y).len() == 1 {
            return Ok(y);
        }
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(Tensor::from_fn(shape, |i| (1.7 * i as f64 + 0.3).sin() + 0.2));
        let yw = tape.mul(y, w)?;
        Ok(tape.sum(yw))
    };
    let mut tape = Tape::detached();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = scalarize(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        let f = |p: &Tensor| {
            let mut tape = Tape::detached();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, x)| tape.constant(if j == i { p.clone() } else { x.clone() }))
                .collect();
            let l = scalarize(&mut tape, &vars).expect("forward succeeded at the base point");
            tape.value(l).item()
        };
        let label = if inputs.len() > 1 { format!("{name}[{i}]") } else { name.to_string() };
        out.push(PrimitiveCheck {
            name: label,
            rel_error: finite_diff_check(f, x, &analytic, step),
        });
    }
    Ok(())
}

/// Finite-difference checks of every differentiable tape operation on
/// random inputs drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize]| Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0));
    // inputs bounded away from zero for ops with a kink there
    let away = |t: Tensor| Tensor::from_fn(t.shape().to_vec(), |i| {
        let v = t.data()[i];
        v + 0.3 * v.signum()
    });
    let h = 1e-5;
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, build: &Build| check_op(name, inputs, build, h, &mut out);

    run("matmul", vec![rand(&[3, 4]), rand(&[4, 2])], &|t, v| t.matmul(v[0], v[1]))?;
    run("transpose", vec![rand(&[3, 5])], &|t, v| t.transpose(v[0]))?;
    run("add", vec![rand(&[2, 3]), rand(&[2, 3])], &|t, v| t.add(v[0], v[1]))?;
    run("sub", vec![rand(&[2, 3]), rand(&[2, 3])], &|t, v| t.sub(v[0], v[1]))?;
    run("mul", vec![rand(&[2, 3]), rand(&[2, 3])], &|t, v| t.mul(v[0], v[1]))?;
    run("scale", vec![rand(&[4])], &|t, v| Ok(t.scale(v[0], -2.5)))?;
    run("add_row_bias", vec![rand(&[3, 4]), rand(&[4])], &|t, v| t.add_row_bias(v[0], v[1]))?;
    run("add_channel_bias", vec![rand(&[3, 2, 4]), rand(&[3])], &|t, v| t.add_channel_bias(v[0], v[1]))?;
    run("sum", vec![rand(&[2, 5])], &|t, v| Ok(t.sum(v[0])))?;
    run("mean", vec![rand(&[2, 5])], &|t, v| Ok(t.mean(v[0])))?;
    run("silu", vec![rand(&[3, 3])], &|t, v| Ok(t.silu(v[0])))?;
    run("gelu", vec![rand(&[3, 3])], &|t, v| Ok(t.gelu(v[0])))?;
    let factor = rand(&[2, 3]).into_data();
    run("mul_const", vec![rand(&[2, 3])], &move |t, v| t.mul_const(v[0], factor.clone()))?;
    run("dropout", vec![rand(&[4, 3])], &|t, v| {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        t.dropout(v[0], 0.3, Some(&mut r))
    })?;
    run("causal_conv1d", vec![rand(&[9, 3]), rand(&[3, 3, 2])], &|t, v| t.causal_conv1d(v[0], v[1], 2))?;
    run("conv2d_same", vec![rand(&[2, 4, 5]), rand(&[3, 3, 2, 3])], &|t, v| t.conv2d(v[0], v[1], Padding::Same))?;
    run("conv2d_none", vec![rand(&[2, 4, 5]), rand(&[1, 1, 2, 3])], &|t, v| t.conv2d(v[0], v[1], Padding::None))?;
    run("avg_pool2d", vec![rand(&[2, 4, 6])], &|t, v| t.avg_pool2d(v[0], (4, 1)))?;
    run("concat_cols", vec![rand(&[3, 2]), rand(&[3, 4])], &|t, v| t.concat_cols(v[0], v[1]))?;
    run("stack_scales", vec![rand(&[5, 2]), rand(&[5, 2]), rand(&[5, 2])], &|t, v| t.stack_scales(v))?;
    run("reshape", vec![rand(&[2, 6])], &|t, v| t.reshape(v[0], &[3, 4]))?;
    for len in [8, 9] {
        run(&format!("rfft_T{len}"), vec![rand(&[len, 3])], &|t, v| t.rfft(v[0]))?;
        let c = crate::spectral::num_bins(len);
        run(&format!("irfft_T{len}"), vec![rand(&[c, 2]), rand(&[c, 2])], &move |t, v| t.irfft(v[0], v[1], len))?;
    }
    run("slab", vec![rand(&[2, 3, 4])], &|t, v| t.slab(v[0], 1))?;
    run("hypot", vec![away(rand(&[3, 4])), away(rand(&[3, 4]))], &|t, v| t.hypot(v[0], v[1]))?;
    run("atan2", vec![away(rand(&[3, 4])), away(rand(&[3, 4]))], &|t, v| t.atan2(v[0], v[1]))?;
    run("info_nce", vec![rand(&[5, 3]), rand(&[5, 3])], &|t, v| t.info_nce(v[0], v[1]))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = check_tape_fn(
            |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn every_primitive_passes() {
        for c in primitive_suite(17).unwrap() {
            assert!(c.rel_error < 1e-5, "{}: {:e}", c.name, c.rel_error);
        }
    }
}
