# Blow-up Lab - 源码包
