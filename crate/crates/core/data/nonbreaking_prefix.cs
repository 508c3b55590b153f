# Czech nonbreaking prefixes
A
B
C
Č
D
E
F
G
H
I
J
K
L
M
N
O
P
Q
R
Ř
S
Š
T
U
V
W
X
Y
Z
Ž
Bc
Ing
Mgr
MUDr
JUDr
PhDr
RNDr
doc
prof
tj
tzv
např
atd
apod
aj
resp
str
čís
kap
sv
odd
ul
nám
č
č #NUMERIC_ONLY#
