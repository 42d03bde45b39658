#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Parse,
    Numeric,
}

impl Category {
    pub fn code(self) -> u8 {
        match self {
            Category::Usage => 1,
            Category::Parse => 2,
            Category::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub category: Category,
    pub error: anyhow::Error,
}

pub trait Categorize<T> {
    fn parse_failure(self) -> Result<T, Failure>;
    fn numeric_failure(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Categorize<T> for Result<T, E> {
    fn parse_failure(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            category: Category::Parse,
            error: e.into(),
        })
    }

    fn numeric_failure(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            category: Category::Numeric,
            error: e.into(),
        })
    }
}
