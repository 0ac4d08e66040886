use crate::scalar::Scalar;
use std::marker::PhantomData;
#[derive(Debug, Clone)]
pub struct SymMpo<T: Scalar>(pub PhantomData<T>);
