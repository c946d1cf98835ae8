pub mod experiments;
pub mod export;
pub mod gates;
pub mod oracle;
pub mod scenarios;
