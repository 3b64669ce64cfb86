//! The `PointSurface` condition: point-in-polygon containment for
//! geofencing. Points on the boundary count as inside.

use crate::dsl::{Token, TokenKind};

use super::{ConditionMatcher, Ist, MatchError};

/// Containment test for a simple polygon given as `[x0, y0, x1, y1, ...]`
/// vertex pairs in order. Uses the winding number, with an explicit
/// boundary check first.
pub fn point_in_polygon(x: f64, y: f64, vertices: &[(f64, f64)]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut winding = 0i32;
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        if on_segment(x, y, x1, y1, x2, y2) {
            return true;
        }
        let side = (x2 - x1) * (y - y1) - (x - x1) * (y2 - y1);
        if y1 <= y {
            if y2 > y && side > 0.0 {
                winding += 1;
            }
        } else if y2 <= y && side < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn on_segment(px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    let cross = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1);
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(f64::MIN_POSITIVE);
    if cross.abs() > 1e-12 * scale * scale.max(1.0) {
        return false;
    }
    px >= x1.min(x2) && px <= x1.max(x2) && py >= y1.min(y2) && py <= y1.max(y2)
}

/// Built-in matcher registered as `PointSurface`.
///
/// Arguments: `lon, lat, x1, y1, ..., xn, yn` with n ≥ 3. Each argument may
/// be a variable or a number.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointSurface;

impl PointSurface {
    pub const CONDITION_TYPE: &'static str = "PointSurface";
}

fn check_arity(args: &[Token]) -> Result<(), MatchError> {
    if args.len() < 8 || args.len() % 2 != 0 {
        return Err(MatchError::Arity(format!(
            "PointSurface expects a point and at least three vertices, got {} argument(s)",
            args.len()
        )));
    }
    if let Some(t) = args.iter().find(|t| t.kind == TokenKind::Text) {
        return Err(MatchError::InvalidArgument(format!(
            "`{}` is not a coordinate",
            t.value
        )));
    }
    Ok(())
}

fn resolve(token: &Token, ist: &Ist) -> Result<f64, MatchError> {
    match token.kind {
        TokenKind::Variable => ist
            .get(&token.value)
            .map(|s| s.value)
            .ok_or_else(|| MatchError::UnresolvedVariable(token.value.clone())),
        TokenKind::Number => token.real_num.ok_or(MatchError::MalformedProgram),
        _ => Err(MatchError::InvalidArgument(token.value.clone())),
    }
}

pub fn fm_point_surface(ist: &Ist, args: &[Token]) -> Result<bool, MatchError> {
    check_arity(args)?;
    let x = resolve(&args[0], ist)?;
    let y = resolve(&args[1], ist)?;
    let vertices = args[2..]
        .chunks_exact(2)
        .map(|pair| Ok((resolve(&pair[0], ist)?, resolve(&pair[1], ist)?)))
        .collect::<Result<Vec<_>, MatchError>>()?;
    Ok(point_in_polygon(x, y, &vertices))
}

impl ConditionMatcher for PointSurface {
    fn validate(&self, args: &[Token]) -> Result<(), MatchError> {
        check_arity(args)
    }

    fn matches(&self, ist: &Ist, args: &[Token]) -> Result<bool, MatchError> {
        fm_point_surface(ist, args)
    }
}
