pub mod gn_oracle;
