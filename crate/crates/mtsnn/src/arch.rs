//! Layer specifications and the architecture-string grammar.
//!
//! Architectures are written the way the experiment tables name them:
//! `784-800-10` for dense stacks (first number is the input width, last
//! the output width) and `15C5-P2-40C5-P2-300` for convolutional stacks
//! (`NCk` is a conv layer with N k-by-k filters, `Pk` a k-by-k average
//! pool; the input shape comes from the dataset and the final
//! classifier layer is implied).

use crate::{Error, Result};

/// Logical activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Flat(usize),
    Chw(usize, usize, usize),
}

impl Shape {
    /// Number of scalar elements.
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Chw(c, h, w) => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            Shape::Flat(n) => write!(f, "{n}"),
            Shape::Chw(c, h, w) => write!(f, "{c}x{h}x{w}"),
        }
    }
}

/// One layer of a network. Dense and Conv2d feed multi-threshold LIF
/// neurons; pooling and flatten are non-spiking pass-through transforms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        fan_in: usize,
        fan_out: usize,
    },
    Conv2d {
        in_shape: (usize, usize, usize),
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool2d {
        in_shape: (usize, usize, usize),
        window: usize,
        stride: usize,
    },
    Flatten {
        in_shape: (usize, usize, usize),
    },
}

impl LayerSpec {
    pub fn in_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { fan_in, .. } => Shape::Flat(fan_in),
            LayerSpec::Conv2d { in_shape: (c, h, w), .. } => Shape::Chw(c, h, w),
            LayerSpec::AvgPool2d { in_shape: (c, h, w), .. } => Shape::Chw(c, h, w),
            LayerSpec::Flatten { in_shape: (c, h, w) } => Shape::Chw(c, h, w),
        }
    }

    pub fn out_shape(&self) -> Shape {
        match *self {
            LayerSpec::Dense { fan_out, .. } => Shape::Flat(fan_out),
            LayerSpec::Conv2d { in_shape: (_, h, w), out_channels, kernel, stride, padding } => {
                let oh = (h + 2 * padding - kernel) / stride + 1;
                let ow = (w + 2 * padding - kernel) / stride + 1;
                Shape::Chw(out_channels, oh, ow)
            }
            LayerSpec::AvgPool2d { in_shape: (c, h, w), window, stride } => {
                Shape::Chw(c, h / window.max(stride), w / window.max(stride))
            }
            LayerSpec::Flatten { in_shape: (c, h, w) } => Shape::Flat(c * h * w),
        }
    }

    /// Whether the layer owns membrane state and fires spikes.
    pub fn is_spiking(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Presynaptic fan-in of a parametric layer.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { fan_in, .. } => Some(fan_in),
            LayerSpec::Conv2d { in_shape: (c, ..), kernel, .. } => Some(c * kernel * kernel),
            _ => None,
        }
    }

    /// Validates the layer's own geometry.
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Dense { fan_in, fan_out } => {
                if fan_in == 0 || fan_out == 0 {
                    return Err(Error::Config("dense layer with zero width".into()));
                }
            }
            LayerSpec::Conv2d { in_shape: (c, h, w), out_channels, kernel, stride, padding } => {
                if c == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config("conv layer with zero dimension".into()));
                }
                for (name, dim) in [("height", h), ("width", w)] {
                    let span = dim + 2 * padding;
                    if span < kernel || (span - kernel) % stride != 0 {
                        return Err(Error::Config(format!(
                            "conv kernel {kernel} stride {stride} padding {padding} does not tile input {name} {dim}"
                        )));
                    }
                }
            }
            LayerSpec::AvgPool2d { in_shape: (c, h, w), window, stride } => {
                if c == 0 || window == 0 {
                    return Err(Error::Config("pool layer with zero dimension".into()));
                }
                if stride != window {
                    return Err(Error::Config(
                        "only non-overlapping pooling (stride = window) is supported".into(),
                    ));
                }
                if h % window != 0 || w % window != 0 {
                    return Err(Error::Config(format!(
                        "pool window {window} does not divide input {h}x{w}"
                    )));
                }
            }
            LayerSpec::Flatten { in_shape: (c, h, w) } => {
                if c * h * w == 0 {
                    return Err(Error::Config("flatten of empty shape".into()));
                }
            }
        }
        Ok(())
    }
}

enum Token {
    Int(usize),
    Conv { filters: usize, kernel: usize },
    Pool { window: usize },
}

fn lex(token: &str) -> Result<Token> {
    let bad = |t: &str| Error::Config(format!("unrecognized architecture token '{t}'"));
    if let Ok(n) = token.parse::<usize>() {
        return Ok(Token::Int(n));
    }
    if let Some(rest) = token.strip_prefix('P') {
        let window = rest.parse::<usize>().map_err(|_| bad(token))?;
        return Ok(Token::Pool { window });
    }
    if let Some((filters, kernel)) = token.split_once('C') {
        let filters = filters.parse::<usize>().map_err(|_| bad(token))?;
        let kernel = kernel.parse::<usize>().map_err(|_| bad(token))?;
        return Ok(Token::Conv { filters, kernel });
    }
    Err(bad(token))
}

/// Parses an architecture string against a dataset input shape and
/// class count, producing a shape-checked layer list.
pub fn parse_arch(arch: &str, input: Shape, num_classes: usize) -> Result<Vec<LayerSpec>> {
    let arch = arch.trim();
    if arch.is_empty() {
        return Err(Error::Config("empty architecture string".into()));
    }
    let tokens: Vec<Token> = arch.split('-').map(lex).collect::<Result<_>>()?;
    let has_spatial = tokens.iter().any(|t| !matches!(t, Token::Int(_)));

    let mut layers = Vec::new();
    if has_spatial {
        // Conv form: dataset supplies the input shape, the classifier
        // layer is implied.
        let mut cur = match input {
            Shape::Chw(c, h, w) => (c, h, w),
            Shape::Flat(_) => {
                return Err(Error::Config(format!(
                    "architecture '{arch}' has conv/pool layers but the input shape is flat"
                )))
            }
        };
        let mut flat: Option<usize> = None;
        for token in &tokens {
            match *token {
                Token::Conv { filters, kernel } => {
                    if flat.is_some() {
                        return Err(Error::Config(format!(
                            "conv layer after dense layer in '{arch}'"
                        )));
                    }
                    let spec = LayerSpec::Conv2d {
                        in_shape: cur,
                        out_channels: filters,
                        kernel,
                        stride: 1,
                        padding: 0,
                    };
                    spec.validate()?;
                    cur = match spec.out_shape() {
                        Shape::Chw(c, h, w) => (c, h, w),
                        Shape::Flat(_) => unreachable!(),
                    };
                    layers.push(spec);
                }
                Token::Pool { window } => {
                    if flat.is_some() {
                        return Err(Error::Config(format!(
                            "pool layer after dense layer in '{arch}'"
                        )));
                    }
                    let spec = LayerSpec::AvgPool2d { in_shape: cur, window, stride: window };
                    spec.validate()?;
                    cur = match spec.out_shape() {
                        Shape::Chw(c, h, w) => (c, h, w),
                        Shape::Flat(_) => unreachable!(),
                    };
                    layers.push(spec);
                }
                Token::Int(width) => {
                    let fan_in = match flat {
                        Some(n) => n,
                        None => {
                            let spec = LayerSpec::Flatten { in_shape: cur };
                            spec.validate()?;
                            let n = spec.out_shape().len();
                            layers.push(spec);
                            n
                        }
                    };
                    let spec = LayerSpec::Dense { fan_in, fan_out: width };
                    spec.validate()?;
                    flat = Some(width);
                    layers.push(spec);
                }
            }
        }
        let fan_in = match flat {
            Some(n) => n,
            None => {
                let spec = LayerSpec::Flatten { in_shape: cur };
                spec.validate()?;
                let n = spec.out_shape().len();
                layers.push(spec);
                n
            }
        };
        layers.push(LayerSpec::Dense { fan_in, fan_out: num_classes });
    } else {
        // Dense form: first width is the input, last is the output.
        let widths: Vec<usize> = tokens
            .iter()
            .map(|t| match t {
                Token::Int(n) => *n,
                _ => unreachable!(),
            })
            .collect();
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "dense architecture '{arch}' needs at least input and output widths"
            )));
        }
        if widths[0] != input.len() {
            return Err(Error::Config(format!(
                "architecture input width {} does not match dataset shape {} ({} values)",
                widths[0],
                input,
                input.len()
            )));
        }
        if *widths.last().unwrap() != num_classes {
            return Err(Error::Config(format!(
                "architecture output width {} does not match {} classes",
                widths.last().unwrap(),
                num_classes
            )));
        }
        for pair in widths.windows(2) {
            let spec = LayerSpec::Dense { fan_in: pair[0], fan_out: pair[1] };
            spec.validate()?;
            layers.push(spec);
        }
    }

    // Shape algebra must chain end to end.
    for pair in layers.windows(2) {
        if pair[0].out_shape().len() != pair[1].in_shape().len() {
            return Err(Error::Config(format!(
                "internal shape chain break: {} -> {}",
                pair[0].out_shape(),
                pair[1].in_shape()
            )));
        }
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_form() {
        let layers = parse_arch("784-800-10", Shape::Chw(1, 28, 28), 10).unwrap();
        assert_eq!(
            layers,
            vec![
                LayerSpec::Dense { fan_in: 784, fan_out: 800 },
                LayerSpec::Dense { fan_in: 800, fan_out: 10 },
            ]
        );
    }

    #[test]
    fn mnist_cnn_form() {
        let layers = parse_arch("15C5-P2-40C5-P2-300", Shape::Chw(1, 28, 28), 10).unwrap();
        assert_eq!(layers.len(), 7);
        assert_eq!(
            layers[0],
            LayerSpec::Conv2d { in_shape: (1, 28, 28), out_channels: 15, kernel: 5, stride: 1, padding: 0 }
        );
        assert_eq!(layers[1].out_shape(), Shape::Chw(15, 12, 12));
        assert_eq!(layers[4], LayerSpec::Flatten { in_shape: (40, 4, 4) });
        assert_eq!(layers[5], LayerSpec::Dense { fan_in: 640, fan_out: 300 });
        assert_eq!(layers[6], LayerSpec::Dense { fan_in: 300, fan_out: 10 });
    }

    #[test]
    fn cifar_cnn_form() {
        let layers = parse_arch(
            "96C3-256C3-P2-384C3-P2-384C3-256C3-1024-1024",
            Shape::Chw(3, 32, 32),
            10,
        )
        .unwrap();
        // 7 conv/pool + flatten + 3 dense.
        assert_eq!(layers.len(), 11);
        assert_eq!(layers[6].out_shape(), Shape::Chw(256, 2, 2));
        assert_eq!(layers[8], LayerSpec::Dense { fan_in: 1024, fan_out: 1024 });
        assert_eq!(layers[10], LayerSpec::Dense { fan_in: 1024, fan_out: 10 });
    }

    #[test]
    fn rejects_input_mismatch() {
        assert!(parse_arch("100-10", Shape::Chw(1, 28, 28), 10).is_err());
        assert!(parse_arch("784-10", Shape::Chw(1, 28, 28), 7).is_err());
    }

    #[test]
    fn rejects_garbage_tokens() {
        assert!(parse_arch("784-abc-10", Shape::Chw(1, 28, 28), 10).is_err());
        assert!(parse_arch("", Shape::Chw(1, 28, 28), 10).is_err());
        assert!(parse_arch("15C5-P5", Shape::Chw(1, 28, 28), 10).is_err()); // 24 % 5 != 0
    }

    #[test]
    fn rejects_conv_after_dense() {
        assert!(parse_arch("15C5-300-10C3", Shape::Chw(1, 28, 28), 10).is_err());
    }

    #[test]
    fn shape_chain_is_consistent() {
        let layers = parse_arch("32C5-P2-64C5-P2-1024", Shape::Chw(1, 28, 28), 10).unwrap();
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_shape().len(), pair[1].in_shape().len());
        }
    }
}
