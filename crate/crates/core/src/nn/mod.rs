//! Neural-network substrate: dense layers, Fourier features, a reverse-mode
//! tape, finite-difference input derivatives and Adam.

pub mod adam;
pub mod derivs;
pub mod mlp;
pub mod serialize;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use derivs::{input_derivs, InputDerivs, Stencil, StencilVars};
pub use mlp::{Activation, FourierFeatureEmbedding, Init, Layer, Mlp, MlpSpec, MlpVars, Mode};
pub use serialize::{Versioned, FORMAT_VERSION};
pub use tape::{Grads, Tape, Var};
pub use tensor::Matrix;

/// Concatenates the adjoints of `vars` in order, substituting zeros for
/// variables that did not influence the output.
pub fn flatten_grads(tape: &Tape, grads: &Grads, vars: &[Var]) -> Vec<f64> {
    let mut out = Vec::new();
    for &v in vars {
        match grads.get(v) {
            Some(g) => out.extend_from_slice(&g.data),
            None => out.extend(std::iter::repeat(0.0).take(tape.value(v).len())),
        }
    }
    out
}

/// Reverse-mode gradient of a scalar loss with respect to the parameters of
/// `net`, in [`Mlp::flat_params`] order.
///
/// `loss_fn` receives the tape and the registered network and must return a
/// `[1×1]` variable built from recorded ops.
pub fn param_grad(
    net: &Mlp,
    loss_fn: impl FnOnce(&mut Tape, &MlpVars) -> crate::Result<Var>,
) -> crate::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let loss = loss_fn(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(crate::Error::invalid("loss must be a scalar"));
    }
    let value = tape.scalar(loss);
    let grads = tape.backward(loss);
    Ok((value, flatten_grads(&tape, &grads, &vars.all())))
}
