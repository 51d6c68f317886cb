use ndarray::ArrayD;

/// Mutable view of one named parameter tensor.
///
/// Non-trainable buffers (batch-norm running statistics) expose no gradient;
/// the optimizer skips them, the checkpoint writer still saves them.
pub struct ParamRef<'a> {
    pub name: String,
    pub value: &'a mut ArrayD<f64>,
    pub grad: Option<&'a mut ArrayD<f64>>,
}

pub trait Parameterized {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>);

    fn zero_grads(&mut self) {
        let mut params = Vec::new();
        self.visit_params("", &mut params);
        for p in params {
            if let Some(g) = p.grad {
                g.fill(0.0);
            }
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
